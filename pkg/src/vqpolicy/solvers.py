"""The curated solver-family design space.

Families: vqe (efficient_su2 ansatz), qaoa, ws_qaoa (warm-start mixer from a
clamped continuous relaxation), and qrao (quantum-random-access compression
with magic or semideterministic rounding).  All families share the same
derivative-free optimization loop and report the same attempt diagnostics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields as dataclass_fields
from typing import Callable, Sequence

import numpy as np

from .optimize import nelder_mead
from .problems import (
    MAX_DENSE_QUBITS,
    IsingHamiltonian,
    QuboProblem,
    bits_to_index,
    ising_energy_table,
    ising_to_qubo,
)
from .simulator import (
    CircuitSpec,
    PauliTerm,
    build_ansatz,
    expectation_pauli,
    sample,
    simulate,
)
from .util import derive_seed

log = logging.getLogger(__name__)

FAMILIES = ("vqe", "qaoa", "ws_qaoa", "qrao")
OPTIMIZERS = ("nelder_mead", "cobyla")
OBJECTIVES = ("energy", "cvar")
QRAO_RATIOS = ("3:1", "2:1")
QRAO_ROUNDINGS = ("magic", "semideterministic")
PENALTY_MODES = ("hard_slack", "tilted")
ENTANGLEMENTS = ("linear", "full")
SAMPLER_SHOTS_CAP = 65536


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """One attempt's full solver configuration; the unit that policies patch."""

    family: str = "vqe"
    ansatz_kind: str = "efficient_su2"
    reps: int = 1
    entanglement: str = "linear"
    optimizer: str = "nelder_mead"
    maxiter: int = 200
    estimator_shots: int = 0
    sampler_shots: int = 1024
    objective: str = "energy"
    cvar_alpha: float = 0.25
    qrao_ratio: str = "3:1"
    qrao_rounding: str = "magic"
    warm_start_epsilon: float = 0.25
    penalty_mode: str = "tilted"
    stagnation_window: int = 25
    stagnation_tol: float = 1e-6
    seed: int = 0


#: fields serialized only when the matching family/objective is active
_CONDITIONAL_FIELDS = {
    "cvar_alpha": lambda c: c.objective == "cvar",
    "qrao_ratio": lambda c: c.family == "qrao",
    "qrao_rounding": lambda c: c.family == "qrao",
    "warm_start_epsilon": lambda c: c.family == "ws_qaoa",
    "ansatz_kind": lambda c: c.family in ("vqe", "qrao"),
}

CONFIG_FIELDS = tuple(f.name for f in dataclass_fields(SolverConfig))


def validate_config(config: SolverConfig) -> list[str]:
    errors = []
    if config.family not in FAMILIES:
        errors.append(f"family: unknown family {config.family!r}")
    if config.ansatz_kind != "efficient_su2":
        errors.append(f"ansatz_kind: unknown ansatz {config.ansatz_kind!r}")
    if config.reps < 1:
        errors.append("reps: must be >= 1")
    if config.entanglement not in ENTANGLEMENTS:
        errors.append(f"entanglement: unknown value {config.entanglement!r}")
    if config.optimizer not in OPTIMIZERS:
        errors.append(f"optimizer: unknown optimizer {config.optimizer!r}")
    if config.maxiter < 1:
        errors.append("maxiter: must be >= 1")
    if config.estimator_shots < 0:
        errors.append("estimator_shots: must be >= 0")
    if not 1 <= config.sampler_shots <= SAMPLER_SHOTS_CAP:
        errors.append(f"sampler_shots: must be in [1, {SAMPLER_SHOTS_CAP}]")
    if config.objective not in OBJECTIVES:
        errors.append(f"objective: unknown objective {config.objective!r}")
    if not 0.0 < config.cvar_alpha <= 1.0:
        errors.append("cvar_alpha: must be in (0, 1]")
    if config.qrao_ratio not in QRAO_RATIOS:
        errors.append(f"qrao_ratio: unknown ratio {config.qrao_ratio!r}")
    if config.qrao_rounding not in QRAO_ROUNDINGS:
        errors.append(f"qrao_rounding: unknown rounding {config.qrao_rounding!r}")
    if not 0.0 < config.warm_start_epsilon < 0.5:
        errors.append("warm_start_epsilon: must be in (0, 0.5)")
    if config.penalty_mode not in PENALTY_MODES:
        errors.append(f"penalty_mode: unknown mode {config.penalty_mode!r}")
    if config.stagnation_window < 2:
        errors.append("stagnation_window: must be >= 2")
    if config.stagnation_tol <= 0.0:
        errors.append("stagnation_tol: must be > 0")
    return errors


def config_to_dict(config: SolverConfig) -> dict:
    """Serialize, emitting family/objective-specific fields only when active."""
    out = {}
    for f in dataclass_fields(SolverConfig):
        cond = _CONDITIONAL_FIELDS.get(f.name)
        if cond is not None and not cond(config):
            continue
        out[f.name] = getattr(config, f.name)
    return out


def config_from_dict(data: dict) -> SolverConfig:
    unknown = set(data) - set(CONFIG_FIELDS)
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    config = SolverConfig(**data)
    errors = validate_config(config)
    if errors:
        raise ValueError("; ".join(errors))
    for name, cond in _CONDITIONAL_FIELDS.items():
        if name in data and not cond(config):
            raise ValueError(f"{name} given but not applicable to family {config.family!r}")
    return config


@dataclass(frozen=True, eq=False)
class RawResult:
    best_bitstring: str
    best_energy: float
    counts: dict[str, int]
    optimizer_history: list[float]
    params_final: np.ndarray
    evals_used: int


@dataclass(frozen=True)
class AttemptOutcome:
    """Diagnostics of one solver attempt, the observation a policy conditions on."""

    gap: float
    feasible: bool
    feasibility_rate: float
    top1_prob: float
    stagnated: bool
    n_unique: int
    attempt_index: int
    family: str
    best_objective: float


# ---------------------------------------------------------------------------
# objectives


def cvar(counts: dict[str, int], energies: dict[str, float], alpha: float) -> float:
    """Mean of the lowest ceil(alpha*K) sampled energies (with multiplicity)."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    total = sum(counts.values())
    if total < 1:
        raise ValueError("empty counts")
    take = math.ceil(alpha * total)
    acc = 0.0
    left = take
    for bits, count in sorted(counts.items(), key=lambda kv: (energies[kv[0]], kv[0])):
        use = min(count, left)
        acc += use * energies[bits]
        left -= use
        if left == 0:
            break
    return acc / take


def _cvar_from_samples(energies: np.ndarray, alpha: float) -> float:
    take = max(1, math.ceil(alpha * energies.size))
    part = np.partition(energies, take - 1)[:take]
    return float(part.mean())


def _cvar_exact(probs: np.ndarray, table: np.ndarray, alpha: float) -> float:
    """CVaR of the exact outcome distribution: mean of the lowest alpha mass."""
    order = np.argsort(table, kind="stable")
    p = probs[order]
    e = table[order]
    cum = np.cumsum(p)
    k = int(np.searchsorted(cum, alpha, side="left"))
    k = min(k, p.size - 1)
    mass_before = cum[k] - p[k]
    frac = alpha - mass_before
    acc = float(e[:k] @ p[:k]) + float(e[k]) * frac
    return acc / alpha


# ---------------------------------------------------------------------------
# warm start


def warm_start_relaxation(q: QuboProblem, epsilon: float) -> np.ndarray:
    """Clamped local minimizer of the continuous QUBO objective over [0,1]^n.

    Projected gradient descent with step 1/L, L a row-sum bound on the Hessian
    spectral norm; the result is clamped into [epsilon, 1-epsilon] so the
    warm-start mixer never pins a qubit exactly.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must be in (0, 0.5)")
    n = q.n
    B = np.zeros((n, n))
    for (i, j), v in q.quadratic.items():
        B[i, j] += v
        B[j, i] += v
    L = float(np.max(np.sum(np.abs(B), axis=1))) if n else 1.0
    if L == 0.0:
        L = 1.0
    c = np.full(n, 0.5)
    for _ in range(500):
        grad = q.linear + B @ c
        c = np.clip(c - grad / L, 0.0, 1.0)
    return np.clip(c, epsilon, 1.0 - epsilon)


# ---------------------------------------------------------------------------
# QRAO


@dataclass(frozen=True)
class QraoGrouping:
    """Assignment of problem variables to qubit buckets (slot order X,Y[,Z])."""

    buckets: tuple[tuple[int, ...], ...]
    ratio: str

    @property
    def arity(self) -> int:
        return 3 if self.ratio == "3:1" else 2

    @property
    def slot_paulis(self) -> str:
        return "XYZ" if self.ratio == "3:1" else "XZ"

    @property
    def n_qubits(self) -> int:
        return len(self.buckets)

    def slot_of(self) -> dict[int, tuple[int, str]]:
        out = {}
        for qb, bucket in enumerate(self.buckets):
            for s, var in enumerate(bucket):
                out[var] = (qb, self.slot_paulis[s])
        return out


def _group_from_pairs(n: int, pairs: Sequence[tuple[int, int]], ratio: str) -> QraoGrouping:
    if ratio not in QRAO_RATIOS:
        raise ValueError(f"unknown ratio {ratio!r}")
    m = 3 if ratio == "3:1" else 2
    neighbors: dict[int, set[int]] = {i: set() for i in range(n)}
    for i, j in pairs:
        neighbors[i].add(j)
        neighbors[j].add(i)
    order = sorted(range(n), key=lambda v: (-len(neighbors[v]), v))
    buckets: list[list[int]] = []
    for v in order:
        for bucket in buckets:
            if len(bucket) < m and not neighbors[v].intersection(bucket):
                bucket.append(v)
                break
        else:
            buckets.append([v])
    return QraoGrouping(buckets=tuple(tuple(b) for b in buckets), ratio=ratio)


def qrao_group(q: QuboProblem, ratio: str) -> QraoGrouping:
    """Greedy interaction-independent packing of variables into qubit buckets."""
    pairs = [p for p, v in q.quadratic.items() if v != 0.0]
    return _group_from_pairs(q.n, pairs, ratio)


def qrao_relax(h: IsingHamiltonian, grouping: QraoGrouping) -> list[PauliTerm]:
    """Relaxed Hamiltonian: each spin z_i becomes sqrt(m) * P_i on its bucket qubit."""
    slot = grouping.slot_of()
    missing = set(range(h.n)) - set(slot)
    if missing:
        raise ValueError(f"grouping does not cover variables {sorted(missing)}")
    root_m = math.sqrt(grouping.arity)
    terms: list[PauliTerm] = []
    if h.offset != 0.0:
        terms.append(PauliTerm(h.offset, {}))
    for i in range(h.n):
        if h.fields[i] != 0.0:
            qb, p = slot[i]
            terms.append(PauliTerm(h.fields[i] * root_m, {qb: p}))
    for (i, j), v in h.couplings.items():
        if v == 0.0:
            continue
        (qi, pi), (qj, pj) = slot[i], slot[j]
        if qi == qj:
            raise ValueError(f"coupled variables {i},{j} share bucket {qi}; grouping invalid")
        terms.append(PauliTerm(v * grouping.arity, {qi: pi, qj: pj}))
    return terms


def _bloch_state(r: np.ndarray) -> np.ndarray:
    """Pure single-qubit state with Bloch vector r (|r| = 1)."""
    theta = math.acos(max(-1.0, min(1.0, float(r[2]))))
    phi = math.atan2(float(r[1]), float(r[0]))
    return np.array(
        [math.cos(theta / 2.0), complex(math.cos(phi), math.sin(phi)) * math.sin(theta / 2.0)],
        dtype=complex,
    )


def qrao_encoding_state(grouping: QraoGrouping, bits: str) -> np.ndarray:
    """Product magic state encoding a classical bitstring (unoccupied slots get +)."""
    norm = math.sqrt(grouping.arity)
    qubit_states = []
    for bucket in grouping.buckets:
        if grouping.ratio == "3:1":
            r = np.ones(3) / norm
            for s, var in enumerate(bucket):
                r[s] = (1.0 - 2.0 * int(bits[var])) / norm
        else:
            r = np.array([1.0, 0.0, 1.0]) / norm
            slots = (0, 2)  # X and Z components
            for s, var in enumerate(bucket):
                r[slots[s]] = (1.0 - 2.0 * int(bits[var])) / norm
        qubit_states.append(_bloch_state(r))
    state = qubit_states[0]
    for q in qubit_states[1:]:
        state = np.kron(q, state)  # little-endian: later qubits are higher bits
    return state


def _magic_bases(ratio: str) -> list[np.ndarray]:
    """Bloch vectors (one per antipodal basis pair) of the magic measurement bases."""
    if ratio == "3:1":
        signs = [(1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)]
        return [np.array(s, dtype=float) / math.sqrt(3.0) for s in signs]
    return [np.array([sx, 0.0, sz]) / math.sqrt(2.0) for sx, sz in [(1, 1), (1, -1)]]


def _basis_unitary(v: np.ndarray) -> np.ndarray:
    """2x2 unitary mapping the +v eigenstate to |0> and -v to |1>."""
    plus = _bloch_state(v)
    minus = _bloch_state(-v)
    return np.array([plus.conj(), minus.conj()])


def magic_round(state: np.ndarray, grouping: QraoGrouping, shots: int, seed: int) -> dict[str, int]:
    """Per-shot random tetrahedral-basis measurement decoded jointly to bits."""
    n_q = grouping.n_qubits
    if state.shape[0] != 1 << n_q:
        raise ValueError(f"state width does not match {n_q} bucket qubits")
    if shots < 1:
        raise ValueError("shots must be >= 1")
    bases = _magic_bases(grouping.ratio)
    unitaries = [_basis_unitary(v) for v in bases]
    slot_index = {"X": 0, "Y": 1, "Z": 2}
    rng = np.random.default_rng(seed)
    n_vars = sum(len(b) for b in grouping.buckets)
    counts: dict[str, int] = {}
    idx = np.arange(1 << n_q)
    for _ in range(shots):
        choice = rng.integers(0, len(bases), size=n_q)
        rotated = state
        for q in range(n_q):
            u = unitaries[choice[q]]
            psi = rotated.reshape(1 << (n_q - 1 - q), 2, 1 << q)
            rotated = np.einsum("ab,ibj->iaj", u, psi).reshape(-1)
        probs = np.abs(rotated) ** 2
        probs /= probs.sum()
        outcome = int(rng.choice(idx, p=probs))
        bits = ["0"] * n_vars
        for q, bucket in enumerate(grouping.buckets):
            sign_vec = bases[choice[q]] * (1.0 if not (outcome >> q) & 1 else -1.0)
            for s, var in enumerate(bucket):
                comp = slot_index[grouping.slot_paulis[s]]
                bits[var] = "0" if sign_vec[comp] > 0 else "1"
        key = "".join(bits)
        counts[key] = counts.get(key, 0) + 1
    return counts


def semideterministic_round(state: np.ndarray, grouping: QraoGrouping) -> str:
    """Sign rounding of per-variable Pauli expectations; ties resolve to 0."""
    n_q = grouping.n_qubits
    if state.shape[0] != 1 << n_q:
        raise ValueError(f"state width does not match {n_q} bucket qubits")
    slot = grouping.slot_of()
    root_m = math.sqrt(grouping.arity)
    bits = []
    for var in range(len(slot)):
        qb, p = slot[var]
        val = root_m * expectation_pauli(state, [PauliTerm(1.0, {qb: p})])
        if abs(val) < 1e-12:
            bits.append("0")
        else:
            bits.append("0" if val > 0 else "1")
    return "".join(bits)


# ---------------------------------------------------------------------------
# variational runs


def _initial_params(circuit: CircuitSpec, rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.5, 0.5, size=circuit.n_params)


def _select_best(
    counts: dict[str, int],
    energy_of: Callable[[str], float],
    feas_check: Callable[[str], bool],
) -> tuple[str, float]:
    """Feasible sample of minimum energy if any, else the overall minimum-energy sample."""
    feasible = [(energy_of(b), b) for b in counts if feas_check(b)]
    pool = feasible if feasible else [(energy_of(b), b) for b in counts]
    energy, bits = min(pool)
    return bits, energy


def _optimize_circuit(
    circuit: CircuitSpec,
    objective: Callable[[np.ndarray], float],
    config: SolverConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[float], int]:
    if config.optimizer == "cobyla":
        log.info("optimizer 'cobyla' requested; using the built-in Nelder-Mead implementation")
    x0 = _initial_params(circuit, rng)
    x_best, _, history = nelder_mead(objective, x0, maxiter=config.maxiter)
    return x_best, history, len(history)


def run_variational(
    problem: IsingHamiltonian,
    feas_check: Callable[[str], bool],
    config: SolverConfig,
) -> RawResult:
    """Optimize the configured ansatz on a diagonal Hamiltonian and sample it."""
    if config.family not in ("vqe", "qaoa", "ws_qaoa"):
        raise SolverError(f"run_variational does not handle family {config.family!r}")
    if problem.n > MAX_DENSE_QUBITS:
        raise SolverError(f"problem width {problem.n} exceeds the {MAX_DENSE_QUBITS}-qubit cap")
    rng = np.random.default_rng(derive_seed(config.seed, "variational"))

    if config.family == "vqe":
        circuit = build_ansatz(config.ansatz_kind, problem.n, config.reps, config.entanglement)
    elif config.family == "qaoa":
        circuit = build_ansatz("qaoa", problem.n, config.reps, config.entanglement, problem=problem)
    else:
        warm = warm_start_relaxation(ising_to_qubo(problem), config.warm_start_epsilon)
        circuit = build_ansatz(
            "ws_qaoa", problem.n, config.reps, config.entanglement, problem=problem, warm_start=warm
        )

    table = ising_energy_table(problem)

    def objective(params: np.ndarray) -> float:
        state = simulate(circuit, params)
        probs = np.abs(state) ** 2
        if config.estimator_shots == 0:
            if config.objective == "cvar":
                return _cvar_exact(probs, table, config.cvar_alpha)
            return float(probs @ table)
        p = np.clip(probs, 0.0, None)
        p /= p.sum()
        draws = rng.multinomial(config.estimator_shots, p)
        sampled = np.repeat(table, draws)
        if config.objective == "cvar":
            return _cvar_from_samples(sampled, config.cvar_alpha)
        return float(sampled.mean())

    params_final, history, evals = _optimize_circuit(circuit, objective, config, rng)
    final_state = simulate(circuit, params_final)
    counts = sample(final_state, config.sampler_shots, derive_seed(config.seed, "sampler"))
    best_bits, best_energy = _select_best(counts, lambda b: float(table[bits_to_index(b)]), feas_check)
    return RawResult(
        best_bitstring=best_bits,
        best_energy=best_energy,
        counts=counts,
        optimizer_history=history,
        params_final=params_final,
        evals_used=evals,
    )


def run_qrao(
    problem: IsingHamiltonian,
    feas_check: Callable[[str], bool],
    config: SolverConfig,
) -> RawResult:
    """Group -> relax -> VQE on the relaxed Pauli Hamiltonian -> round to bits.

    The relaxed Hamiltonian is not diagonal, so the inner VQE always uses exact
    Pauli expectations regardless of estimator_shots.
    """
    if config.family != "qrao":
        raise SolverError(f"run_qrao requires family 'qrao', got {config.family!r}")
    pairs = [p for p, v in problem.couplings.items() if v != 0.0]
    grouping = _group_from_pairs(problem.n, pairs, config.qrao_ratio)
    if grouping.n_qubits > MAX_DENSE_QUBITS:
        raise SolverError(f"compressed width {grouping.n_qubits} exceeds the cap")
    terms = qrao_relax(problem, grouping)
    rng = np.random.default_rng(derive_seed(config.seed, "qrao"))
    circuit = build_ansatz(config.ansatz_kind, grouping.n_qubits, config.reps, config.entanglement)

    def objective(params: np.ndarray) -> float:
        return expectation_pauli(simulate(circuit, params), terms)

    params_final, history, evals = _optimize_circuit(circuit, objective, config, rng)
    final_state = simulate(circuit, params_final)
    if config.qrao_rounding == "magic":
        counts = magic_round(final_state, grouping, config.sampler_shots, derive_seed(config.seed, "magic"))
    else:
        bits = semideterministic_round(final_state, grouping)
        counts = {bits: config.sampler_shots}
    best_bits, best_energy = _select_best(counts, problem.energy_of_bits, feas_check)
    return RawResult(
        best_bitstring=best_bits,
        best_energy=best_energy,
        counts=counts,
        optimizer_history=history,
        params_final=params_final,
        evals_used=evals,
    )


def run_solver(
    problem: IsingHamiltonian,
    feas_check: Callable[[str], bool],
    config: SolverConfig,
) -> RawResult:
    if config.family == "qrao":
        return run_qrao(problem, feas_check, config)
    return run_variational(problem, feas_check, config)


# ---------------------------------------------------------------------------
# diagnostics


def stagnation(history: Sequence[float], window: int = 25, tol: float = 1e-6) -> bool:
    """True when the best-so-far trace improved negligibly over the final window."""
    if len(history) < window:
        return False
    last = history[-1]
    improvement = history[-window] - last
    return improvement < tol * (1.0 + abs(last))


def diagnostics(
    raw: RawResult,
    feas_check: Callable[[str], bool],
    gap_fn: Callable[[str], "GapScore"],
    attempt_index: int = 0,
    family: str = "",
    stagnation_window: int = 25,
    stagnation_tol: float = 1e-6,
) -> AttemptOutcome:
    """Summarize one attempt into the observation record policies condition on."""
    total = sum(raw.counts.values())
    if total < 1:
        raise ValueError("empty counts")
    feas_shots = sum(c for b, c in raw.counts.items() if feas_check(b))
    score = gap_fn(raw.best_bitstring)
    return AttemptOutcome(
        gap=float(score.value),
        feasible=bool(score.feasible),
        feasibility_rate=feas_shots / total,
        top1_prob=max(raw.counts.values()) / total,
        stagnated=stagnation(raw.optimizer_history, stagnation_window, stagnation_tol),
        n_unique=len(raw.counts),
        attempt_index=attempt_index,
        family=family,
        best_objective=float(score.objective),
    )


def failed_outcome(attempt_index: int, family: str) -> AttemptOutcome:
    """Outcome recorded when a solver attempt raises: infeasible with gap 1.0."""
    return AttemptOutcome(
        gap=1.0,
        feasible=False,
        feasibility_rate=0.0,
        top1_prob=1.0,
        stagnated=False,
        n_unique=0,
        attempt_index=attempt_index,
        family=family,
        best_objective=float("nan"),
    )
