import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qunnbench import circuits, qsim, quanv
from qunnbench.circuits import CircuitSpec, builtin_ansatz, parse_circuit
from qunnbench.errors import ArgumentError, CacheError, ConfigError
from qunnbench.quanv import QuanvConfig, QuanvFilter

IDENTITY = CircuitSpec(4, ())


def cfg_for(aid, seed=0, **kw):
    return QuanvConfig.sampled(builtin_ansatz(aid), np.random.default_rng(seed), **kw)


def slow_features(image, cfg):
    """Per-patch simulator path: encode, run the ansatz, read <Z_k>."""
    patches = quanv.extract_patches(image, cfg.kernel, cfg.stride)
    out = np.empty(patches.shape[:2] + (cfg.circuit.n_qubits,))
    for r in range(patches.shape[0]):
        for c in range(patches.shape[1]):
            enc = quanv.encode_patch(patches[r, c], cfg.encode_scale)
            s = circuits.evolve_batch(cfg.circuit, cfg.ansatz_params, enc.amplitudes[None])
            out[r, c] = qsim.expectation_z_batch(s, cfg.circuit.n_qubits)[0]
    return out


def test_patch_grid_examples():
    img = np.arange(28 * 28, dtype=float).reshape(28, 28) / 784
    p = quanv.extract_patches(img)
    assert p.shape == (14, 14, 4)
    assert p.shape[0] * p.shape[1] == 196
    assert np.array_equal(p[3, 5], [img[6, 10], img[6, 11], img[7, 10], img[7, 11]])
    small = np.array([[0.1, 0.2], [0.3, 0.4]])
    assert np.array_equal(quanv.extract_patches(small)[0, 0], small.reshape(-1))
    const = quanv.extract_patches(np.full((28, 28), 0.3))
    assert np.all(const == 0.3)


@pytest.mark.parametrize("shape, k, s", [((27, 28), 2, 2), ((1, 1), 2, 2), ((28, 28), 3, 2)])
def test_patch_grid_incompatible(shape, k, s):
    with pytest.raises(ArgumentError):
        quanv.extract_patches(np.zeros(shape), k, s)


def test_encode_examples():
    assert np.allclose(quanv.encode_patch([0, 0, 0, 0]).amplitudes, qsim.zero_state(4).amplitudes)
    s = quanv.encode_patch([1, 0, 0, 0])
    z = [qsim.expectation_z(s, k) for k in range(4)]
    assert np.allclose(z, [-1, 1, 1, 1], atol=1e-12)
    s = quanv.encode_patch([0.5] * 4)
    assert np.allclose([qsim.expectation_z(s, k) for k in range(4)], 0, atol=1e-12)
    with pytest.raises(ArgumentError):
        quanv.encode_patch([1.2, 0, 0, 0])
    with pytest.raises(ArgumentError):
        quanv.encode_patch([np.nan, 0, 0, 0])


def test_encoded_states_match_gates(rng):
    angles = rng.uniform(0, np.pi, (5, 4))
    fast = quanv.encoded_states(angles)
    for b in range(5):
        assert np.allclose(fast[b], quanv.encode_patch(angles[b] / np.pi).amplitudes, atol=1e-14)


def test_identity_ansatz_zero_image():
    cfg = QuanvConfig(IDENTITY, [])
    f = quanv.quanv_features(np.zeros((28, 28)), cfg)
    assert f.shape == (14, 14, 4) and np.all(f == 1.0)


@pytest.mark.parametrize("aid", [1, 3, 6, 9, 14, 19])
def test_features_match_simulator(aid, rng):
    cfg = cfg_for(aid, int(rng.integers(1000)))
    img = rng.random((8, 8))
    assert np.allclose(quanv.quanv_features(img, cfg), slow_features(img, cfg), atol=1e-12)


def test_feature_range_and_shape(rng):
    cfg = cfg_for(6)
    f = QuanvFilter(cfg).features(rng.random((3, 28, 28)))
    assert f.shape == (3, 14, 14, 4)
    assert np.all(np.abs(f) <= 1 + 1e-12)


def test_batch_equals_single_bitwise(rng):
    filt = QuanvFilter(cfg_for(13))
    imgs = rng.random((4, 28, 28))
    batch = filt.features(imgs)
    for b in range(4):
        assert np.array_equal(batch[b], filt.features(imgs[b : b + 1])[0])


def test_features_reject_bad_pixels():
    with pytest.raises(ArgumentError):
        QuanvFilter(cfg_for(1)).features(np.full((1, 28, 28), 1.5))


def test_config_validation():
    with pytest.raises(ConfigError):
        QuanvConfig(builtin_ansatz(1), np.zeros(3))
    with pytest.raises(ConfigError):
        QuanvConfig(CircuitSpec(3, ()), [])
    with pytest.raises(ConfigError):
        QuanvConfig(IDENTITY, [], stride=0)
    two = cfg_for(2, layers=2)
    assert two.circuit.n_params == 2 * builtin_ansatz(2).n_params


def test_locality(rng):
    filt = QuanvFilter(cfg_for(9))
    img = rng.random((28, 28))
    base = filt.features(img[None])[0]
    bumped = img.copy()
    bumped[9, 14] = 1 - bumped[9, 14]
    diff = np.any(filt.features(bumped[None])[0] != base, axis=-1)
    assert diff.sum() == 1 and diff[4, 7]


def test_jacobian_identity_ansatz(rng):
    for scale in (np.pi, 1.0):
        cfg = QuanvConfig(IDENTITY, [], encode_scale=scale)
        x = rng.random(4)
        jac = quanv.quanv_patch_jacobian(x, cfg)
        assert np.allclose(jac, np.diag(-scale * np.sin(scale * x)), atol=1e-12)


def _fd_jacobian(filt, x, h=1e-5):
    jac = np.empty((4, 4))
    for p in range(4):
        up, dn = x.copy(), x.copy()
        up[p] += h
        dn[p] -= h
        jac[:, p] = (filt.patch_features(up[None])[0] - filt.patch_features(dn[None])[0]) / (2 * h)
    return jac


def test_jacobian_vs_finite_differences():
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(100):
        aid = int(rng.choice(circuits.CATALOG_IDS))
        cfg = cfg_for(aid, int(rng.integers(10**6)), encode_scale=float(rng.uniform(0.5, np.pi)))
        # keep the FD stencil inside [0, 1]
        x = rng.uniform(1e-3, 1 - 1e-3, 4)
        jac = quanv.quanv_patch_jacobian(x, cfg)
        worst = max(worst, np.max(np.abs(jac - _fd_jacobian(QuanvFilter(cfg), x))))
    assert worst < 1e-6


def test_jacobian_column_of_discarded_qubit(rng):
    # qubit 2 never interacts, so channels 0, 1, 3 are constant in pixel 2
    c = parse_circuit({
        "n_qubits": 4,
        "ops": [
            {"gate": "RX", "target": 2, "param": 0},
            {"gate": "RY", "target": 0, "param": 1},
            {"gate": "CNOT", "target": 1, "control": 0},
            {"gate": "CRX", "target": 3, "control": 1, "param": 2},
        ],
    })
    cfg = QuanvConfig(c, [0.7, 1.9, 2.3])
    x = rng.uniform(0.01, 0.99, 4)
    jac = quanv.quanv_patch_jacobian(x, cfg)
    fd = _fd_jacobian(QuanvFilter(cfg), x)
    assert np.max(np.abs(jac[:, 2] - fd[:, 2])) < 1e-6
    assert np.allclose(jac[[0, 1, 3], 2], 0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vjp_is_adjoint_of_jacobian(seed):
    r = np.random.default_rng(seed)
    filt = QuanvFilter(cfg_for(int(r.choice(circuits.CATALOG_IDS)), seed))
    img = r.random((1, 6, 6))
    g = r.normal(size=(1, 3, 3, 4))
    v = r.normal(size=(1, 6, 6))
    # <g, J v> == <J^T g, v> with J v from the per-patch Jacobians
    jac = filt.patch_jacobians(quanv.extract_patches(img[0]).reshape(-1, 4)).reshape(3, 3, 4, 4)
    jv = np.einsum("rckp,rcp->rck", jac, quanv.extract_patches(v[0]))
    lhs = np.sum(g[0] * jv)
    rhs = np.sum(filt.vjp(img, g) * v)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_digest_tracks_config():
    a = cfg_for(3)
    assert a.digest() == cfg_for(3).digest()
    assert a.digest() != QuanvConfig(a.ansatz, a.ansatz_params, encode_scale=1.0).digest()
    assert a.digest() != cfg_for(3, seed=1).digest()


def test_cache_round_trip(tmp_path, rng):
    t = rng.normal(size=(5, 14, 14, 4))
    d = quanv.features_digest("slice", "backend")
    path = tmp_path / "f.qnvf"
    quanv.save_features(path, t, d)
    back = quanv.load_features(path, d)
    assert np.array_equal(back, t)
    assert quanv.load_features(path, quanv.features_digest("slice", "other")) is None


def test_cache_header_format(tmp_path):
    t = np.zeros((1000, 14, 14, 4))
    d = bytes(range(32))
    path = tmp_path / "f.qnvf"
    quanv.save_features(path, t, d)
    raw = path.read_bytes()
    magic, version, n, h, w, c, digest = struct.unpack(">4sH4I32s", raw[:54])
    assert (magic, version, (n, h, w, c), digest) == (b"QNVF", 1, (1000, 14, 14, 4), d)
    assert len(raw) == 54 + 8 * 1000 * 14 * 14 * 4
    assert quanv.read_features_header(path) == ((1000, 14, 14, 4), d)


def test_cache_values_little_endian(tmp_path):
    path = tmp_path / "f.qnvf"
    quanv.save_features(path, np.full((1, 1, 1, 1), 1.5), bytes(32))
    assert path.read_bytes()[54:] == struct.pack("<d", 1.5)


@pytest.mark.parametrize("damage", ["magic", "truncate", "version", "short"])
def test_cache_corruption(tmp_path, damage):
    path = tmp_path / "f.qnvf"
    d = bytes(32)
    quanv.save_features(path, np.ones((2, 2, 2, 2)), d)
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[:4] = b"XXXX"
    elif damage == "truncate":
        raw = raw[:-8]
    elif damage == "version":
        raw[4:6] = b"\x00\x09"
    else:
        raw = raw[:20]
    path.write_bytes(bytes(raw))
    with pytest.raises(CacheError):
        quanv.load_features(path, d)


def test_cache_rejects_bad_input(tmp_path):
    with pytest.raises(ArgumentError):
        quanv.save_features(tmp_path / "x", np.zeros((2, 2)), bytes(32))
    with pytest.raises(ArgumentError):
        quanv.save_features(tmp_path / "x", np.zeros((1, 1, 1, 1)), b"short")


def test_feature_cache_hit_and_miss(tmp_path, rng):
    imgs = rng.random((2, 28, 28))
    cache = quanv.FeatureCache(tmp_path)
    filt = QuanvFilter(cfg_for(1))
    first = cache.get_or_compute("ds", filt, imgs)
    assert cache.path_for("ds", filt.digest()).exists()
    calls = []

    class Spy:
        def digest(self):
            return filt.digest()

        def features(self, x):
            calls.append(1)
            return filt.features(x)

    assert np.array_equal(cache.get_or_compute("ds", Spy(), imgs), first)
    assert not calls
    other = QuanvFilter(QuanvConfig(filt.cfg.ansatz, filt.cfg.ansatz_params, encode_scale=1.0))
    assert cache.get("ds", other.digest()) is None
