"""Circuit documents, the built-in ansatz catalog, and execution.

A circuit document is JSON::

    {"label": "Ansatz 3", "n_qubits": 4,
     "ops": [{"gate": "RX", "target": 0, "param": 0},
             {"gate": "CRZ", "control": 3, "target": 2, "param": 8},
             {"gate": "RY", "target": 1, "angle": 0.5}]}

Rotation ops carry exactly one of ``param`` (slot in the parameter
vector) or ``angle`` (fixed radians).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import qsim
from .errors import ArgumentError, CatalogLookupError, ParseError
from .qsim import GateKind, StateVector

CATALOG_IDS = (1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 14, 15, 16, 17, 18, 19)


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    target: int
    control: int | None = None
    param: int | None = None
    angle: float | None = None

    def to_dict(self) -> dict:
        d = {"gate": self.kind.value, "target": self.target}
        if self.control is not None:
            d["control"] = self.control
        if self.param is not None:
            d["param"] = self.param
        if self.angle is not None:
            d["angle"] = self.angle
        return d


def _check_op(op: GateOp, n_qubits: int, where: str):
    kind = op.kind
    if not 0 <= op.target < n_qubits:
        raise ParseError(f"target {op.target} out of range for {n_qubits} qubits", f"{where}.target")
    if kind.controlled:
        if op.control is None:
            raise ParseError(f"{kind.value} requires a control", f"{where}.control")
        if not 0 <= op.control < n_qubits:
            raise ParseError(f"control {op.control} out of range for {n_qubits} qubits", f"{where}.control")
        if op.control == op.target:
            raise ParseError("control equals target", f"{where}.control")
    elif op.control is not None:
        raise ParseError(f"{kind.value} does not take a control", f"{where}.control")
    if kind.parameterized:
        if (op.param is None) == (op.angle is None):
            raise ParseError(f"{kind.value} needs exactly one of 'param' / 'angle'", where)
        if op.param is not None and op.param < 0:
            raise ParseError("parameter slot must be non-negative", f"{where}.param")
    elif op.param is not None or op.angle is not None:
        raise ParseError(f"{kind.value} takes no parameter", where)


@dataclass(frozen=True)
class CircuitSpec:
    """Immutable gate list. ``n_params`` defaults to the highest slot + 1."""

    n_qubits: int
    ops: tuple[GateOp, ...]
    n_params: int | None = None
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ops", tuple(self.ops))
        if not isinstance(self.n_qubits, int) or not 1 <= self.n_qubits <= qsim.MAX_QUBITS:
            raise ParseError(f"n_qubits must be in 1..{qsim.MAX_QUBITS}", "n_qubits")
        used = set()
        for i, op in enumerate(self.ops):
            _check_op(op, self.n_qubits, f"ops[{i}]")
            if op.param is not None:
                used.add(op.param)
        n_params = self.n_params
        if n_params is None:
            n_params = max(used) + 1 if used else 0
            object.__setattr__(self, "n_params", n_params)
        missing = sorted(set(range(n_params)) - used)
        extra = sorted(s for s in used if s >= n_params)
        if extra:
            raise ParseError(f"parameter slot {extra[0]} >= n_params {n_params}", "ops")
        if missing:
            raise ParseError(f"parameter slot {missing[0]} is never referenced", "ops")

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n_qubits": self.n_qubits,
            "ops": [op.to_dict() for op in self.ops],
        }

    def count(self, kind: GateKind | str) -> int:
        kind = GateKind(kind)
        return sum(op.kind is kind for op in self.ops)


def parse_circuit(text: str | bytes | dict) -> CircuitSpec:
    """Parse a circuit document (JSON text or an already-decoded dict)."""
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, f"line {exc.lineno} col {exc.colno}") from None
    if not isinstance(doc, dict):
        raise ParseError("document must be an object", "$")
    unknown = set(doc) - {"label", "n_qubits", "ops"}
    if unknown:
        raise ParseError(f"unknown field {sorted(unknown)[0]!r}", "$")
    label = doc.get("label", "")
    if not isinstance(label, str):
        raise ParseError("label must be a string", "label")
    n_qubits = doc.get("n_qubits")
    if type(n_qubits) is not int:
        raise ParseError("n_qubits must be an integer", "n_qubits")
    raw_ops = doc.get("ops")
    if not isinstance(raw_ops, list):
        raise ParseError("ops must be a list", "ops")
    ops = []
    for i, raw in enumerate(raw_ops):
        where = f"ops[{i}]"
        if not isinstance(raw, dict):
            raise ParseError("op must be an object", where)
        unknown = set(raw) - {"gate", "target", "control", "param", "angle"}
        if unknown:
            raise ParseError(f"unknown field {sorted(unknown)[0]!r}", where)
        try:
            kind = GateKind(raw.get("gate"))
        except ValueError:
            raise ParseError(f"unknown gate {raw.get('gate')!r}", f"{where}.gate") from None
        for key in ("target", "control", "param"):
            if key in raw and type(raw[key]) is not int:
                raise ParseError(f"{key} must be an integer", f"{where}.{key}")
        if "target" not in raw:
            raise ParseError("missing target", where)
        angle = raw.get("angle")
        if angle is not None:
            if isinstance(angle, bool) or not isinstance(angle, (int, float)):
                raise ParseError("angle must be a number", f"{where}.angle")
            angle = float(angle)
        ops.append(GateOp(kind, raw["target"], raw.get("control"), raw.get("param"), angle))
    return CircuitSpec(n_qubits, tuple(ops), label=label)


def dump_circuit(circuit: CircuitSpec) -> str:
    return json.dumps(circuit.to_dict(), indent=1)


@lru_cache(maxsize=None)
def builtin_ansatz(ansatz_id: int) -> CircuitSpec:
    """One layer of a catalog template on 4 qubits (ids 1-9, 11-19)."""
    if ansatz_id not in CATALOG_IDS:
        raise CatalogLookupError(f"no built-in ansatz with id {ansatz_id!r}")
    text = resources.files("qunnbench.catalog").joinpath(f"ansatz_{ansatz_id:02d}.json").read_text()
    return parse_circuit(text)


def repeat_layers(circuit: CircuitSpec, layers: int) -> CircuitSpec:
    """Stack ``layers`` copies; each copy gets its own parameter slots."""
    if layers < 1:
        raise ArgumentError("layers must be >= 1")
    if layers == 1:
        return circuit
    ops = []
    for layer in range(layers):
        off = layer * circuit.n_params
        for op in circuit.ops:
            param = None if op.param is None else op.param + off
            ops.append(GateOp(op.kind, op.target, op.control, param, op.angle))
    label = f"{circuit.label} x{layers}" if circuit.label else ""
    return CircuitSpec(circuit.n_qubits, tuple(ops), circuit.n_params * layers, label)


def control_gate_tag(circuit: CircuitSpec) -> str:
    """'CRz', 'CRx', 'CRy', 'mixed', or '-' from the controlled rotations present."""
    kinds = {op.kind for op in circuit.ops if op.kind.controlled and op.kind.parameterized}
    if not kinds:
        return "-"
    if len(kinds) > 1:
        return "mixed"
    return "CR" + kinds.pop().value[-1].lower()


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_params(circuit: CircuitSpec, rng) -> np.ndarray:
    """I.i.d. uniform angles on [0, 2*pi), one per parameter slot."""
    return _as_rng(rng).uniform(0.0, 2 * np.pi, circuit.n_params)


def evolve_batch(circuit: CircuitSpec, params: np.ndarray, states: np.ndarray) -> np.ndarray:
    """Apply ``circuit`` to every row of ``states``.

    ``params`` is either one vector shared by all rows or a ``(B, n_params)``
    array with one vector per row.  ``states`` is not modified.
    """
    params = np.asarray(params, dtype=float)
    if params.shape[-1] != circuit.n_params:
        raise ArgumentError(f"expected {circuit.n_params} parameters, got {params.shape[-1]}")
    out = np.array(states, dtype=complex, copy=True)
    if out.ndim != 2 or out.shape[1] != 2**circuit.n_qubits:
        raise ArgumentError(f"states must have shape (B, {2 ** circuit.n_qubits})")
    if params.ndim == 2 and params.shape[0] != out.shape[0]:
        raise ArgumentError("per-row parameters must match the batch size")
    n = circuit.n_qubits
    for op in circuit.ops:
        if op.param is not None:
            theta = params[..., op.param]
        else:
            theta = op.angle
        block = qsim.gate_block(op.kind, theta)
        qsim.apply_block_batch(out, block, n, op.target, op.control)
    return out


def run_batch(circuit: CircuitSpec, params: np.ndarray) -> np.ndarray:
    """States ``U(theta_b)|0...0>`` for a ``(B, n_params)`` parameter array."""
    params = np.asarray(params, dtype=float)
    if params.ndim != 2:
        raise ArgumentError("run_batch expects a 2-D parameter array")
    zeros = qsim.zero_states(circuit.n_qubits, params.shape[0])
    return evolve_batch(circuit, params, zeros)


def run(circuit: CircuitSpec, params=()) -> StateVector:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.shape[0] != circuit.n_params:
        raise ArgumentError(f"expected {circuit.n_params} parameters, got {params.shape[0]}")
    state = evolve_batch(circuit, params, qsim.zero_states(circuit.n_qubits, 1))
    return StateVector(circuit.n_qubits, state[0])


def unitary(circuit: CircuitSpec, params=()) -> np.ndarray:
    """Dense matrix of the bound circuit, built column-by-column from basis states."""
    dim = 2**circuit.n_qubits
    cols = evolve_batch(circuit, np.asarray(params, dtype=float).reshape(-1), np.eye(dim))
    return cols.T
