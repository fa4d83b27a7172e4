"""Dense statevector simulation of parameterized circuits.

Qubit ordering is little-endian everywhere: qubit 0 is the least significant
bit of the basis-state index, and position i of a rendered bitstring is qubit
i.  The gate set is deliberately minimal (H, RX, RY, RZ, CX, CZ); every ansatz
compiles down to it so that logical gate statistics are well defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .problems import (
    MAX_DENSE_QUBITS,
    IsingHamiltonian,
    index_to_bits,
    ising_energy_table,
)

#: when True, the norm is checked after every gate instead of once at the end
STRICT_NORM_CHECK = False

_ONE_QUBIT = {"h", "rx", "ry", "rz"}
_TWO_QUBIT = {"cx", "cz"}
_PARAMETRIC = {"rx", "ry", "rz"}


@dataclass(frozen=True)
class GateOp:
    """One gate: a literal angle, or angle = scale * params[pidx] when pidx is set."""

    name: str
    qubits: tuple[int, ...]
    angle: float | None = None
    pidx: int | None = None
    scale: float = 1.0


@dataclass(frozen=True)
class CircuitSpec:
    n_qubits: int
    gates: tuple[GateOp, ...]
    n_params: int

    def __post_init__(self):
        for g in self.gates:
            if g.name in _ONE_QUBIT and len(g.qubits) != 1:
                raise ValueError(f"{g.name} takes one qubit")
            if g.name in _TWO_QUBIT and len(g.qubits) != 2:
                raise ValueError(f"{g.name} takes two qubits")
            if g.name not in _ONE_QUBIT | _TWO_QUBIT:
                raise ValueError(f"unknown gate {g.name!r}")
            for q in g.qubits:
                if not 0 <= q < self.n_qubits:
                    raise ValueError(f"qubit {q} out of range")
            if len(set(g.qubits)) != len(g.qubits):
                raise ValueError(f"repeated qubit in {g}")
            if g.name in _PARAMETRIC:
                if (g.angle is None) == (g.pidx is None):
                    raise ValueError(f"{g.name} needs exactly one of angle/pidx")
                if g.pidx is not None and not 0 <= g.pidx < self.n_params:
                    raise ValueError(f"parameter index {g.pidx} out of range")
            elif g.angle is not None or g.pidx is not None:
                raise ValueError(f"{g.name} takes no angle")


def _mat_h() -> np.ndarray:
    return np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2.0)


def _mat_rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def _mat_ry(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2.0), math.sin(theta / 2.0)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _mat_rz(theta: float) -> np.ndarray:
    return np.array([[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex)


_INDEX_CACHE: dict[int, np.ndarray] = {}


def _indices(n: int) -> np.ndarray:
    arr = _INDEX_CACHE.get(n)
    if arr is None:
        arr = np.arange(1 << n, dtype=np.int64)
        _INDEX_CACHE[n] = arr
    return arr


def _apply_1q(state: np.ndarray, mat: np.ndarray, q: int, n: int) -> np.ndarray:
    psi = state.reshape(1 << (n - 1 - q), 2, 1 << q)
    return np.einsum("ab,ibj->iaj", mat, psi).reshape(-1)


def _apply_cx(state: np.ndarray, ctrl: int, tgt: int, n: int) -> np.ndarray:
    idx = _indices(n)
    src = idx ^ (((idx >> ctrl) & 1) << tgt)
    return state[src]


def _apply_cz(state: np.ndarray, a: int, b: int, n: int) -> np.ndarray:
    idx = _indices(n)
    sign = 1.0 - 2.0 * (((idx >> a) & (idx >> b)) & 1)
    return state * sign


def resolve_angle(g: GateOp, params: np.ndarray) -> float:
    if g.pidx is not None:
        return g.scale * float(params[g.pidx])
    return float(g.angle)


def simulate(circuit: CircuitSpec, params: Sequence[float]) -> np.ndarray:
    """Apply the circuit to |0...0> and return the statevector."""
    n = circuit.n_qubits
    if n > MAX_DENSE_QUBITS:
        raise ValueError(f"simulator capped at {MAX_DENSE_QUBITS} qubits, got {n}")
    params = np.asarray(params, dtype=float)
    if params.shape != (circuit.n_params,):
        raise ValueError(f"expected {circuit.n_params} parameters, got {params.shape}")
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1.0
    for g in circuit.gates:
        if g.name == "h":
            state = _apply_1q(state, _mat_h(), g.qubits[0], n)
        elif g.name == "rx":
            state = _apply_1q(state, _mat_rx(resolve_angle(g, params)), g.qubits[0], n)
        elif g.name == "ry":
            state = _apply_1q(state, _mat_ry(resolve_angle(g, params)), g.qubits[0], n)
        elif g.name == "rz":
            state = _apply_1q(state, _mat_rz(resolve_angle(g, params)), g.qubits[0], n)
        elif g.name == "cx":
            state = _apply_cx(state, g.qubits[0], g.qubits[1], n)
        else:
            state = _apply_cz(state, g.qubits[0], g.qubits[1], n)
        if STRICT_NORM_CHECK:
            _check_norm(state)
    _check_norm(state)
    return state


def _check_norm(state: np.ndarray) -> None:
    norm = float(np.sum(np.abs(state) ** 2))
    if abs(norm - 1.0) > 1e-10:
        raise RuntimeError(f"statevector norm drifted to {norm}")


def sample(state: np.ndarray, shots: int, seed: int) -> dict[str, int]:
    """Multinomial draw of measurement outcomes, deterministic given the seed."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    n = _width_of(state)
    probs = np.abs(state) ** 2
    probs = np.clip(probs, 0.0, None)
    probs /= probs.sum()
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(shots, probs)
    return {index_to_bits(int(k), n): int(c) for k, c in enumerate(draws) if c > 0}


def expectation_diag(state: np.ndarray, h: IsingHamiltonian, table: np.ndarray | None = None) -> float:
    """<state| H |state> for a diagonal (Ising) Hamiltonian.

    Callers evaluating many states against one Hamiltonian should precompute
    the basis-energy table once and pass it in.
    """
    n = _width_of(state)
    if n != h.n:
        raise ValueError(f"state width {n} != hamiltonian width {h.n}")
    if table is None:
        table = ising_energy_table(h)
    probs = np.abs(state) ** 2
    return float(probs @ table)


@dataclass(frozen=True)
class PauliTerm:
    """coefficient * product of single-qubit Paulis; empty factors = identity."""

    coefficient: float
    factors: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        for q, p in self.factors.items():
            if p not in ("X", "Y", "Z"):
                raise ValueError(f"bad Pauli {p!r} on qubit {q}")


def apply_pauli_string(state: np.ndarray, factors: dict[int, str]) -> np.ndarray:
    n = _width_of(state)
    out = state
    idx = _indices(n)
    for q, p in factors.items():
        if q >= n:
            raise ValueError(f"Pauli factor on qubit {q} beyond width {n}")
        bit = (idx >> q) & 1
        if p == "X":
            out = out[idx ^ (1 << q)]
        elif p == "Y":
            out = out[idx ^ (1 << q)] * np.where(bit == 1, 1j, -1j)
        else:
            out = out * (1.0 - 2.0 * bit)
    return out


def expectation_pauli(state: np.ndarray, terms: Sequence[PauliTerm]) -> float:
    """Sum of coefficient-weighted Pauli expectation values (real part)."""
    acc = 0.0 + 0.0j
    for t in terms:
        if not t.factors:
            acc += t.coefficient
            continue
        acc += t.coefficient * np.vdot(state, apply_pauli_string(state, t.factors))
    return float(acc.real)


def _width_of(state: np.ndarray) -> int:
    size = state.shape[0]
    n = size.bit_length() - 1
    if 1 << n != size:
        raise ValueError(f"state length {size} is not a power of two")
    return n


# ---------------------------------------------------------------------------
# ansatz construction


def build_ansatz(
    kind: str,
    n: int,
    reps: int,
    entanglement: str = "linear",
    problem: IsingHamiltonian | None = None,
    warm_start: Sequence[float] | None = None,
) -> CircuitSpec:
    """Compile one of the supported ansatz families to the minimal gate set.

    efficient_su2: reps blocks of per-qubit RY then RZ rotations with fresh
    parameters, a CX entangler between blocks, and one final rotation layer;
    2*n*(reps+1) parameters.

    qaoa: H on every qubit, then per layer the cost unitary exp(-i gamma H)
    (RZ(2 gamma h_i) per field, CX-RZ(2 gamma J_ij)-CX per coupling) and an
    RX(2 beta) mixer; 2*reps parameters ordered (gamma_1, beta_1, ...).

    ws_qaoa: initial RY(theta_i) with theta_i = 2*arcsin(sqrt(c_i)) from the
    warm-start vector, the same cost unitary, and the rotated single-qubit
    mixer RY(theta_i) RZ(-2 beta) RY(-theta_i); 2*reps parameters.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if entanglement not in ("linear", "full"):
        raise ValueError(f"unknown entanglement {entanglement!r}")
    if kind == "efficient_su2":
        return _efficient_su2(n, reps, entanglement)
    if kind == "qaoa":
        if problem is None:
            raise ValueError("qaoa ansatz requires the problem Hamiltonian")
        return _qaoa(n, reps, problem, warm_start=None)
    if kind == "ws_qaoa":
        if problem is None:
            raise ValueError("ws_qaoa ansatz requires the problem Hamiltonian")
        if warm_start is None:
            raise ValueError("ws_qaoa ansatz requires a warm-start vector")
        warm = np.asarray(warm_start, dtype=float)
        if warm.shape != (n,):
            raise ValueError(f"warm-start vector must have length {n}")
        return _qaoa(n, reps, problem, warm_start=warm)
    raise ValueError(f"unknown ansatz kind {kind!r}")


def _entangler(n: int, entanglement: str) -> list[GateOp]:
    if entanglement == "linear":
        return [GateOp("cx", (q, q + 1)) for q in range(n - 1)]
    return [GateOp("cx", (i, j)) for i in range(n) for j in range(i + 1, n)]


def _efficient_su2(n: int, reps: int, entanglement: str) -> CircuitSpec:
    gates: list[GateOp] = []
    p = 0
    for r in range(reps + 1):
        gates.extend(GateOp("ry", (q,), pidx=p + q) for q in range(n))
        gates.extend(GateOp("rz", (q,), pidx=p + n + q) for q in range(n))
        p += 2 * n
        if r < reps:
            gates.extend(_entangler(n, entanglement))
    return CircuitSpec(n_qubits=n, gates=tuple(gates), n_params=2 * n * (reps + 1))


def _qaoa(n: int, reps: int, problem: IsingHamiltonian, warm_start: np.ndarray | None) -> CircuitSpec:
    if problem.n != n:
        raise ValueError(f"problem width {problem.n} != ansatz width {n}")
    gates: list[GateOp] = []
    thetas = None
    if warm_start is None:
        gates.extend(GateOp("h", (q,)) for q in range(n))
    else:
        thetas = 2.0 * np.arcsin(np.sqrt(warm_start))
        gates.extend(GateOp("ry", (q,), angle=float(thetas[q])) for q in range(n))
    for layer in range(reps):
        gamma, beta = 2 * layer, 2 * layer + 1
        for i in range(n):
            hi = problem.fields[i]
            if hi != 0.0:
                gates.append(GateOp("rz", (i,), pidx=gamma, scale=2.0 * hi))
        for (i, j), jij in problem.couplings.items():
            if jij == 0.0:
                continue
            gates.append(GateOp("cx", (i, j)))
            gates.append(GateOp("rz", (j,), pidx=gamma, scale=2.0 * jij))
            gates.append(GateOp("cx", (i, j)))
        if warm_start is None:
            gates.extend(GateOp("rx", (q,), pidx=beta, scale=2.0) for q in range(n))
        else:
            for q in range(n):
                gates.append(GateOp("ry", (q,), angle=-float(thetas[q])))
                gates.append(GateOp("rz", (q,), pidx=beta, scale=-2.0))
                gates.append(GateOp("ry", (q,), angle=float(thetas[q])))
    return CircuitSpec(n_qubits=n, gates=tuple(gates), n_params=2 * reps)


def circuit_stats(circuit: CircuitSpec) -> dict:
    """Logical gate statistics; depth is greedy layering over the compiled gate list."""
    by_name: dict[str, int] = {}
    layer = [0] * max(circuit.n_qubits, 1)
    depth = 0
    two_qubit = 0
    for g in circuit.gates:
        by_name[g.name] = by_name.get(g.name, 0) + 1
        if g.name in _TWO_QUBIT:
            two_qubit += 1
        new_layer = 1 + max(layer[q] for q in g.qubits)
        for q in g.qubits:
            layer[q] = new_layer
        depth = max(depth, new_layer)
    return {
        "n_qubits": circuit.n_qubits,
        "n_params": circuit.n_params,
        "total_gates": len(circuit.gates),
        "two_qubit_gates": two_qubit,
        "depth": depth,
        "by_name": by_name,
    }
