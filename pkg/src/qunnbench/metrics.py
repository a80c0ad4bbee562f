"""Circuit descriptors: expressibility, entanglement capability, PCA view.

Expressibility is the KL divergence between the histogram of pairwise
state fidelities of a circuit and the fidelity law of Haar-random states,
``p(F) = (N - 1)(1 - F)^(N - 2)``.  Lower means more expressive.

Entanglement capability averages the Meyer-Wallach measure, normalised
here as ``Q = (2/n) * sum_i (1 - Tr rho_i^2)`` so that ``Q`` lies in
``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import qsim
from .circuits import CircuitSpec, _as_rng, control_gate_tag, run_batch
from .errors import ArgumentError
from .qsim import StateVector

DEFAULT_PAIRS = 5000
DEFAULT_BINS = 75
DEFAULT_SAMPLES = 5000


def haar_bin_mass(edge_lo: float, edge_hi: float, dim: int) -> float:
    """Haar probability that the fidelity falls in ``[edge_lo, edge_hi)``."""
    if not (0.0 <= edge_lo < edge_hi <= 1.0):
        raise ArgumentError(f"invalid interval [{edge_lo}, {edge_hi}]")
    if dim < 2:
        raise ArgumentError("dim must be >= 2")
    return (1.0 - edge_lo) ** (dim - 1) - (1.0 - edge_hi) ** (dim - 1)


def haar_bin_masses(n_bins: int, dim: int) -> np.ndarray:
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    return np.array([haar_bin_mass(lo, hi, dim) for lo, hi in zip(edges[:-1], edges[1:])])


def sample_haar_fidelities(n: int, dim: int, rng) -> np.ndarray:
    """Inverse-CDF draws from the Haar fidelity law (testing hook)."""
    u = _as_rng(rng).random(n)
    return 1.0 - u ** (1.0 / (dim - 1))


@dataclass(frozen=True)
class FidelityHistogram:
    n_bins: int
    edges: np.ndarray
    counts: np.ndarray
    total: int

    @classmethod
    def from_fidelities(cls, fidelities, n_bins: int) -> "FidelityHistogram":
        if n_bins < 2:
            raise ArgumentError("n_bins must be >= 2")
        f = np.clip(np.asarray(fidelities, dtype=float), 0.0, 1.0)
        counts, edges = np.histogram(f, bins=n_bins, range=(0.0, 1.0))
        return cls(n_bins, edges, counts, int(f.size))

    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


def kl_to_haar(hist: FidelityHistogram, dim: int) -> float:
    """sum_bins P_A log(P_A / P_H); empty bins contribute 0."""
    p = hist.probabilities()
    q = haar_bin_masses(hist.n_bins, dim)
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def expressibility_from_fidelities(fidelities, dim: int, n_bins: int = DEFAULT_BINS) -> float:
    return kl_to_haar(FidelityHistogram.from_fidelities(fidelities, n_bins), dim)


def sample_fidelities(circuit: CircuitSpec, n_pairs: int, rng) -> np.ndarray:
    rng = _as_rng(rng)
    theta = rng.uniform(0.0, 2 * np.pi, (n_pairs, 2, circuit.n_params))
    a = run_batch(circuit, theta[:, 0])
    b = run_batch(circuit, theta[:, 1])
    return qsim.fidelity_batch(a, b)


def expressibility(
    circuit: CircuitSpec,
    n_pairs: int = DEFAULT_PAIRS,
    n_bins: int = DEFAULT_BINS,
    rng=None,
) -> float:
    if circuit.n_qubits < 1:
        raise ArgumentError("circuit has no qubits")
    if n_pairs < 1000:
        raise ArgumentError("n_pairs must be >= 1000")
    fids = sample_fidelities(circuit, n_pairs, rng)
    return expressibility_from_fidelities(fids, 2**circuit.n_qubits, n_bins)


def meyer_wallach_batch(states: np.ndarray, n_qubits: int) -> np.ndarray:
    impurity = sum(1.0 - qsim.reduced_purity_batch(states, n_qubits, q) for q in range(n_qubits))
    return np.clip(2.0 / n_qubits * impurity, 0.0, 1.0)


def meyer_wallach(state: StateVector) -> float:
    return float(meyer_wallach_batch(state.amplitudes.reshape(1, -1), state.n_qubits)[0])


def entanglement_capability(circuit: CircuitSpec, n_samples: int = DEFAULT_SAMPLES, rng=None) -> float:
    if n_samples < 1000:
        raise ArgumentError("n_samples must be >= 1000")
    theta = _as_rng(rng).uniform(0.0, 2 * np.pi, (n_samples, circuit.n_params))
    states = run_batch(circuit, theta)
    return float(np.mean(meyer_wallach_batch(states, circuit.n_qubits)))


@dataclass(frozen=True)
class MetricReport:
    label: str
    expressibility: float
    entanglement: float
    control_gate: str
    n_pairs: int
    n_bins: int
    n_samples: int
    seed: int


def metric_report(
    circuit: CircuitSpec,
    seed: int,
    n_pairs: int = DEFAULT_PAIRS,
    n_bins: int = DEFAULT_BINS,
    n_samples: int = DEFAULT_SAMPLES,
) -> MetricReport:
    """Both metrics with independent streams spawned from ``seed``."""
    expr_seq, ent_seq = np.random.SeedSequence(seed).spawn(2)
    return MetricReport(
        label=circuit.label,
        expressibility=expressibility(circuit, n_pairs, n_bins, np.random.default_rng(expr_seq)),
        entanglement=entanglement_capability(circuit, n_samples, np.random.default_rng(ent_seq)),
        control_gate=control_gate_tag(circuit),
        n_pairs=n_pairs,
        n_bins=n_bins,
        n_samples=n_samples,
        seed=seed,
    )


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(values, vectors)`` sorted by decreasing eigenvalue; column
    ``i`` of ``vectors`` pairs with ``values[i]``.  Sweeps stop once the
    off-diagonal Frobenius norm drops below ``tol`` times the matrix norm.
    """
    a = np.array(a, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ArgumentError("matrix must be square")
    v = np.eye(n)
    scale = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(tau) > 1e150:
                    # rotation angle underflows: t ~ 1 / (2 tau)
                    t = 0.5 / tau
                else:
                    t = np.copysign(1.0, tau) / (abs(tau) + np.hypot(1.0, tau))
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap, aq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values, v = values[order], v[:, order]
    # sign convention: largest-magnitude component of each vector is positive
    pivots = np.argmax(np.abs(v), axis=0)
    v = v * np.sign(v[pivots, np.arange(n)])
    return values, v


def pca_project(states):
    """Project states onto their top-2 principal directions.

    Each state becomes ``2 * 2**n`` real coordinates (real parts, then
    imaginary parts).  Covariance uses the ``M - 1`` denominator.
    Returns ``(points, (var1, var2))`` with ``points`` of shape ``(M, 2)``.
    """
    if isinstance(states, np.ndarray):
        amps = np.asarray(states, dtype=complex)
    else:
        states = list(states)
        dims = {len(s.amplitudes) for s in states}
        if len(dims) > 1:
            raise ArgumentError("states have different dimensions")
        amps = np.array([s.amplitudes for s in states]) if states else np.empty((0, 0))
    if amps.shape[0] < 3:
        raise ArgumentError("need at least 3 states")
    x = np.concatenate([amps.real, amps.imag], axis=1)
    x = x - x.mean(axis=0)
    cov = x.T @ x / (x.shape[0] - 1)
    values, vectors = jacobi_eigh(cov)
    points = x @ vectors[:, :2]
    var = (max(float(values[0]), 0.0), max(float(values[1]), 0.0))
    return points, var
