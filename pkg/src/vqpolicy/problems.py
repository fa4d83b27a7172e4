"""QUBO and Ising problem forms, the MIS encoding, and gap metrics.

Bitstring convention (used across the whole package): a bitstring is a str of
'0'/'1' where position i is variable/qubit i, and the integer index of a
computational basis state is little-endian, index = sum_i b_i * 2**i.  All
rendering/parsing goes through ``index_to_bits`` / ``bits_to_index``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

Pair = tuple[int, int]

#: Hard cap on dense enumeration / statevector width.
MAX_DENSE_QUBITS = 24


def _norm_pair(i: int, j: int) -> Pair:
    if i == j:
        raise ValueError(f"diagonal pair ({i},{j}) is not a quadratic term")
    return (i, j) if i < j else (j, i)


def bits_to_index(bits: str) -> int:
    k = 0
    for i, ch in enumerate(bits):
        if ch == "1":
            k |= 1 << i
        elif ch != "0":
            raise ValueError(f"invalid bit character {ch!r} in {bits!r}")
    return k


def index_to_bits(index: int, n: int) -> str:
    return "".join("1" if (index >> i) & 1 else "0" for i in range(n))


def bits_to_array(bits: str | Sequence[int], n: int) -> np.ndarray:
    if isinstance(bits, str):
        arr = np.fromiter((1.0 if ch == "1" else 0.0 for ch in bits), dtype=float)
    else:
        arr = np.asarray(bits, dtype=float)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} bits, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class GraphInstance:
    """Undirected graph with 0-indexed vertices and a deduplicated edge set."""

    n: int
    edges: frozenset[Pair]
    name: str = ""

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("vertex count must be nonnegative")
        for (u, v) in self.edges:
            if u == v:
                raise ValueError(f"self-loop at vertex {u}")
            if u > v:
                raise ValueError(f"edge ({u},{v}) not normalized (use from_edges)")
            if not (0 <= u < self.n and 0 <= v < self.n):
                raise ValueError(f"edge ({u},{v}) out of range for n={self.n}")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int]], name: str = "") -> "GraphInstance":
        return cls(n=n, edges=frozenset(_norm_pair(u, v) for u, v in edges), name=name)

    def adjacency_masks(self) -> list[int]:
        """Per-vertex neighbor bitmask (vertex i set in adj[j] iff edge ij)."""
        adj = [0] * self.n
        for (u, v) in self.edges:
            adj[u] |= 1 << v
            adj[v] |= 1 << u
        return adj


@dataclass(frozen=True, eq=False)
class QuboProblem:
    """minimize offset + sum_i linear[i] x_i + sum_{i<j} quadratic[i,j] x_i x_j over x in {0,1}^n."""

    n: int
    linear: np.ndarray
    quadratic: dict[Pair, float]
    offset: float = 0.0

    def __post_init__(self):
        lin = np.array(self.linear, dtype=float)
        if lin.shape != (self.n,):
            raise ValueError(f"linear must have length {self.n}")
        object.__setattr__(self, "linear", lin)
        quad: dict[Pair, float] = {}
        for (i, j), v in dict(self.quadratic).items():
            p = _norm_pair(int(i), int(j))
            if p[1] >= self.n or p[0] < 0:
                raise ValueError(f"quadratic key {p} out of range for n={self.n}")
            # duplicate (i,j)/(j,i) insertions accumulate
            quad[p] = quad.get(p, 0.0) + float(v)
        object.__setattr__(self, "quadratic", quad)
        object.__setattr__(self, "offset", float(self.offset))

    def energy(self, bits: str | Sequence[int]) -> float:
        b = bits_to_array(bits, self.n)
        e = self.offset + float(self.linear @ b)
        for (i, j), v in self.quadratic.items():
            e += v * b[i] * b[j]
        return e


@dataclass(frozen=True, eq=False)
class IsingHamiltonian:
    """offset + sum_i fields[i] z_i + sum_{i<j} couplings[i,j] z_i z_j with z in {+1,-1}^n."""

    n: int
    fields: np.ndarray
    couplings: dict[Pair, float]
    offset: float = 0.0

    def __post_init__(self):
        h = np.array(self.fields, dtype=float)
        if h.shape != (self.n,):
            raise ValueError(f"fields must have length {self.n}")
        object.__setattr__(self, "fields", h)
        coup: dict[Pair, float] = {}
        for (i, j), v in dict(self.couplings).items():
            p = _norm_pair(int(i), int(j))
            if p[1] >= self.n or p[0] < 0:
                raise ValueError(f"coupling key {p} out of range for n={self.n}")
            coup[p] = coup.get(p, 0.0) + float(v)
        object.__setattr__(self, "couplings", coup)
        object.__setattr__(self, "offset", float(self.offset))

    def energy(self, spins: Sequence[int]) -> float:
        z = np.asarray(spins, dtype=float)
        if z.shape != (self.n,):
            raise ValueError(f"expected {self.n} spins")
        e = self.offset + float(self.fields @ z)
        for (i, j), v in self.couplings.items():
            e += v * z[i] * z[j]
        return e

    def energy_of_bits(self, bits: str | Sequence[int]) -> float:
        b = bits_to_array(bits, self.n)
        return self.energy(1.0 - 2.0 * b)


def ising_energy_table(h: IsingHamiltonian) -> np.ndarray:
    """Vector of energies over all 2^n computational basis states (little-endian)."""
    if h.n > MAX_DENSE_QUBITS:
        raise ValueError(f"energy table capped at {MAX_DENSE_QUBITS} spins, got {h.n}")
    k = np.arange(1 << h.n, dtype=np.int64)
    e = np.full(1 << h.n, h.offset, dtype=float)
    for i in range(h.n):
        hi = h.fields[i]
        if hi != 0.0:
            e += hi * (1.0 - 2.0 * ((k >> i) & 1))
    for (i, j), v in h.couplings.items():
        if v != 0.0:
            e += v * (1.0 - 2.0 * (((k >> i) ^ (k >> j)) & 1))
    return e


def evaluate_qubo(q: QuboProblem, bits: str | Sequence[int]) -> float:
    """Energy of a bit assignment under the QUBO objective."""
    return q.energy(bits)


def mis_to_qubo(graph: GraphInstance, penalty: float = 2.0) -> QuboProblem:
    """Encode maximum independent set as min(-sum_i x_i + penalty * sum_edges x_i x_j).

    penalty > 1 guarantees every QUBO minimizer is a maximum independent set:
    deselecting one endpoint of a violated edge changes the energy by
    penalty * (violations removed) - 1 > 0 whenever at least one edge is violated.
    """
    if penalty <= 1.0:
        raise ValueError(f"penalty must be > 1 (got {penalty})")
    return QuboProblem(
        n=graph.n,
        linear=-np.ones(graph.n),
        quadratic={e: float(penalty) for e in graph.edges},
        offset=0.0,
    )


def qubo_to_ising(q: QuboProblem) -> IsingHamiltonian:
    """Substitute x_i = (1 - z_i) / 2; energies agree exactly on every assignment."""
    h = np.zeros(q.n)
    offset = q.offset
    offset += float(np.sum(q.linear)) / 2.0
    h -= q.linear / 2.0
    couplings: dict[Pair, float] = {}
    for (i, j), b in q.quadratic.items():
        offset += b / 4.0
        h[i] -= b / 4.0
        h[j] -= b / 4.0
        couplings[(i, j)] = couplings.get((i, j), 0.0) + b / 4.0
    return IsingHamiltonian(n=q.n, fields=h, couplings=couplings, offset=offset)


def ising_to_qubo(h: IsingHamiltonian) -> QuboProblem:
    """Inverse substitution z_i = 1 - 2 x_i."""
    linear = -2.0 * h.fields.copy()
    offset = h.offset + float(np.sum(h.fields))
    quadratic: dict[Pair, float] = {}
    for (i, j), v in h.couplings.items():
        offset += v
        linear[i] -= 2.0 * v
        linear[j] -= 2.0 * v
        quadratic[(i, j)] = quadratic.get((i, j), 0.0) + 4.0 * v
    return QuboProblem(n=h.n, linear=linear, quadratic=quadratic, offset=offset)


@dataclass(frozen=True)
class GapScore:
    """Normalized distance from the reference optimum; 1.0 for infeasible outputs."""

    value: float
    feasible: bool
    objective: float


def is_independent_set(graph: GraphInstance, bits: str) -> bool:
    if len(bits) != graph.n:
        raise ValueError(f"expected {graph.n} bits, got {len(bits)}")
    for (u, v) in graph.edges:
        if bits[u] == "1" and bits[v] == "1":
            return False
    return True


def mis_gap(graph: GraphInstance, bits: str, opt_size: int) -> GapScore:
    """Optimality gap (opt - found) / opt against the exact MIS size; infeasible -> 1.0."""
    if opt_size < 1:
        raise ValueError("opt_size must be >= 1")
    if len(bits) != graph.n:
        raise ValueError(f"expected {graph.n} bits, got {len(bits)}")
    found = bits.count("1")
    if not is_independent_set(graph, bits):
        return GapScore(value=1.0, feasible=False, objective=float(found))
    value = (opt_size - found) / opt_size
    return GapScore(value=float(min(max(value, 0.0), 1.0)), feasible=True, objective=float(found))


def cvrp_gap(routed_cost: float, reference_cost: float, feasible: bool = True) -> GapScore:
    """Route-cost gap (c - ref) / c of a routed CVRP solution; infeasible -> 1.0.

    Normalization by the obtained cost matches the benchmark anchor pairs
    (287.0, 247.0) -> 0.139373 and (311.0, 247.0) -> 0.205788.
    """
    if reference_cost <= 0.0:
        raise ValueError(f"reference cost must be positive (got {reference_cost})")
    if not feasible:
        return GapScore(value=1.0, feasible=False, objective=float(routed_cost))
    value = (routed_cost - reference_cost) / routed_cost
    return GapScore(value=float(min(max(value, 0.0), 1.0)), feasible=True, objective=float(routed_cost))
