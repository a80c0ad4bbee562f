"""Dense statevector simulation for small registers.

Qubit 0 is the least-significant bit of the amplitude index.  Rotations
follow ``R_A(theta) = exp(-i theta A / 2)``; controlled rotations apply that
block to the target when the control bit is 1.

Gates are applied by strided pair updates on a ``(2,) * n`` view of the
amplitude array, never by building the ``2**n x 2**n`` unitary.  The
batched kernels (``*_batch``) take arrays of shape ``(B, 2**n)`` and are
what the circuit runner and the metric samplers use; the single-state
functions are thin pure wrappers around them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ConfigError

MAX_QUBITS = 8
PURITY_SNAP = 1e-12


class GateKind(str, enum.Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    H = "H"
    X = "X"
    CNOT = "CNOT"
    CZ = "CZ"
    CRX = "CRX"
    CRY = "CRY"
    CRZ = "CRZ"

    @property
    def parameterized(self) -> bool:
        return self in _PARAMETERIZED

    @property
    def controlled(self) -> bool:
        return self in _CONTROLLED


_PARAMETERIZED = frozenset(
    {GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}
)
_CONTROLLED = frozenset(
    {GateKind.CNOT, GateKind.CZ, GateKind.CRX, GateKind.CRY, GateKind.CRZ}
)

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized amplitudes of an ``n_qubits`` register (read-only)."""

    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex)
        if amps.shape != (2**self.n_qubits,):
            raise ArgumentError(
                f"expected {2 ** self.n_qubits} amplitudes, got shape {amps.shape}"
            )
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    def __len__(self):
        return len(self.amplitudes)

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


def _check_n(n_qubits) -> int:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigError(f"n_qubits must be in 1..{MAX_QUBITS}, got {n_qubits!r}")
    return int(n_qubits)


def _check_qubit(q, n_qubits: int, what: str = "qubit") -> int:
    if not isinstance(q, (int, np.integer)) or not 0 <= q < n_qubits:
        raise ArgumentError(f"{what} index {q!r} out of range for {n_qubits} qubits")
    return int(q)


def gate_block(kind: GateKind | str, theta=None) -> np.ndarray:
    """2x2 block acting on the target qubit.

    For controlled kinds this is the block applied when the control is set.
    ``theta`` may be an array, giving a ``(B, 2, 2)`` stack.
    """
    kind = GateKind(kind)
    if kind.parameterized:
        if theta is None:
            raise ArgumentError(f"{kind.value} requires an angle")
        th = np.asarray(theta, dtype=float)
        c = np.cos(th / 2)
        s = np.sin(th / 2)
        axis = kind.value[-1]
        if axis == "X":
            rows = [[c, -1j * s], [-1j * s, c]]
        elif axis == "Y":
            rows = [[c + 0j, -s + 0j], [s + 0j, c + 0j]]
        else:
            e = np.exp(-0.5j * th)
            rows = [[e, np.zeros_like(e)], [np.zeros_like(e), np.conj(e)]]
        block = np.array(rows, dtype=complex)
        # (2, 2, *batch) -> (*batch, 2, 2)
        return np.moveaxis(block, (0, 1), (-2, -1))
    if theta is not None:
        raise ArgumentError(f"{kind.value} takes no angle")
    if kind is GateKind.H:
        return _H.copy()
    if kind in (GateKind.X, GateKind.CNOT):
        return _X.copy()
    return _Z.copy()


def zero_state(n_qubits: int) -> StateVector:
    n = _check_n(n_qubits)
    amps = np.zeros(2**n, dtype=complex)
    amps[0] = 1.0
    return StateVector(n, amps)


def zero_states(n_qubits: int, batch: int) -> np.ndarray:
    n = _check_n(n_qubits)
    out = np.zeros((batch, 2**n), dtype=complex)
    out[:, 0] = 1.0
    return out


def _validate_wires(n_qubits: int, kind: GateKind, target, control):
    target = _check_qubit(target, n_qubits, "target")
    if kind.controlled:
        if control is None:
            raise ArgumentError(f"{kind.value} requires a control qubit")
        control = _check_qubit(control, n_qubits, "control")
        if control == target:
            raise ArgumentError("control and target must differ")
    elif control is not None:
        raise ArgumentError(f"{kind.value} does not take a control qubit")
    return target, control


def apply_block_batch(
    states: np.ndarray,
    block: np.ndarray,
    n_qubits: int,
    target: int,
    control: int | None = None,
) -> np.ndarray:
    """Apply a 2x2 ``block`` to ``target`` of every row of ``states`` in place.

    ``block`` is either ``(2, 2)`` or a per-row stack ``(B, 2, 2)``.
    Returns ``states`` for chaining.
    """
    batch = states.shape[0]
    view = states.reshape((batch,) + (2,) * n_qubits)
    # qubit q lives on axis n - q (LSB is the last axis)
    i0 = [slice(None)] * (n_qubits + 1)
    i1 = list(i0)
    i0[n_qubits - target] = 0
    i1[n_qubits - target] = 1
    if control is not None:
        i0[n_qubits - control] = 1
        i1[n_qubits - control] = 1
    i0, i1 = tuple(i0), tuple(i1)
    a0 = view[i0].copy()
    a1 = view[i1].copy()
    if block.ndim == 3:
        shape = (batch,) + (1,) * (a0.ndim - 1)
        u = [[block[:, r, c].reshape(shape) for c in range(2)] for r in range(2)]
    else:
        u = block
    view[i0] = u[0][0] * a0 + u[0][1] * a1
    view[i1] = u[1][0] * a0 + u[1][1] * a1
    return states


def apply_gate_batch(states, kind, n_qubits, target, control=None, theta=None):
    """Validated batched gate application (in place on ``states``)."""
    kind = GateKind(kind)
    target, control = _validate_wires(n_qubits, kind, target, control)
    return apply_block_batch(states, gate_block(kind, theta), n_qubits, target, control)


def apply_gate(
    state: StateVector,
    gate: GateKind | str,
    target: int,
    control: int | None = None,
    theta: float | None = None,
) -> StateVector:
    """Return a new state with ``gate`` applied; the input is not modified."""
    kind = GateKind(gate)
    n = state.n_qubits
    target, control = _validate_wires(n, kind, target, control)
    out = state.amplitudes.copy().reshape(1, -1)
    apply_block_batch(out, gate_block(kind, theta), n, target, control)
    return StateVector(n, out[0])


def z_signs(n_qubits: int, qubit: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    return 1.0 - 2.0 * ((idx >> qubit) & 1)


def expectation_z_batch(states: np.ndarray, n_qubits: int) -> np.ndarray:
    """<Z_k> for every qubit of every row: shape ``(B, n_qubits)``."""
    probs = np.abs(states) ** 2
    signs = np.stack([z_signs(n_qubits, q) for q in range(n_qubits)], axis=1)
    return np.einsum("bi,ik->bk", probs, signs)


def expectation_z(state: StateVector, qubit: int) -> float:
    q = _check_qubit(qubit, state.n_qubits)
    probs = np.abs(state.amplitudes) ** 2
    value = float(np.sum(probs * z_signs(state.n_qubits, q)))
    return min(1.0, max(-1.0, value))


def reduced_purity_batch(states: np.ndarray, n_qubits: int, qubit: int) -> np.ndarray:
    """Tr(rho_q^2) of the single-qubit marginal of every row."""
    batch = states.shape[0]
    view = states.reshape((batch,) + (2,) * n_qubits)
    m = np.moveaxis(view, n_qubits - qubit, 1).reshape(batch, 2, -1)
    rho = np.einsum("bim,bjm->bij", m, m.conj())
    # Tr(rho^2) = sum_ij |rho_ij|^2 for Hermitian rho
    purity = np.sum(np.abs(rho) ** 2, axis=(1, 2))
    # rounding leaves product states a few ulp short of 1; snap so they read as unentangled
    purity = np.where(purity > 1.0 - PURITY_SNAP, 1.0, purity)
    return np.clip(purity, 0.5, 1.0)


def reduced_purity(state: StateVector, qubit: int) -> float:
    q = _check_qubit(qubit, state.n_qubits)
    return float(reduced_purity_batch(state.amplitudes.reshape(1, -1), state.n_qubits, q)[0])


def fidelity_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.abs(np.sum(a.conj() * b, axis=-1)) ** 2


def fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2 for pure states."""
    if a.n_qubits != b.n_qubits:
        raise ArgumentError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    value = float(abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2)
    return min(1.0, value)
