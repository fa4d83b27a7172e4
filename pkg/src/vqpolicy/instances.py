"""Benchmark instance parsing and exact classical oracles.

Graph files come in two formats: a simple edge list (header "n m", 0-indexed,
'#' comments) and DIMACS ("p edge n m", 1-indexed "e u v" lines, 'c' comments).
CVRP instances use the VRPLIB subset with EUC_2D edge weights, where pairwise
distances follow the TSPLIB nint convention (round half up to integer).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from itertools import permutations
from typing import Sequence

import numpy as np

from .problems import GraphInstance, QuboProblem, index_to_bits


class ParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# graph files


def parse_edge_list(text: str, name: str = "") -> GraphInstance:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ParseError("empty graph file")
    if any(ln.startswith("p ") or ln.startswith("p\t") for ln in lines):
        return _parse_dimacs(lines, name)
    return _parse_simple(lines, name)


def _parse_simple(lines: list[str], name: str) -> GraphInstance:
    rows = [ln for ln in lines if not ln.startswith("#")]
    header = rows[0].split()
    if len(header) != 2:
        raise ParseError(f"bad header {rows[0]!r}: expected 'n m'")
    try:
        n, m = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ParseError(f"bad header {rows[0]!r}") from exc
    if len(rows) - 1 < m:
        raise ParseError(f"expected {m} edge lines, found {len(rows) - 1}")
    if len(rows) - 1 > m:
        raise ParseError(f"found {len(rows) - 1} edge lines, header says {m}")
    edges = []
    for ln in rows[1 : m + 1]:
        parts = ln.split()
        if len(parts) != 2:
            raise ParseError(f"bad edge line {ln!r}")
        u, v = int(parts[0]), int(parts[1])
        _check_edge(u, v, n)
        edges.append((u, v))
    return GraphInstance.from_edges(n, edges, name=name)


def _parse_dimacs(lines: list[str], name: str) -> GraphInstance:
    n = m = None
    edges = []
    for ln in lines:
        if ln.startswith("c"):
            continue
        parts = ln.split()
        if parts[0] == "p":
            if len(parts) != 4 or parts[1] != "edge":
                raise ParseError(f"bad problem line {ln!r}")
            n, m = int(parts[2]), int(parts[3])
        elif parts[0] == "e":
            if n is None:
                raise ParseError("edge line before problem line")
            if len(parts) != 3:
                raise ParseError(f"bad edge line {ln!r}")
            u, v = int(parts[1]) - 1, int(parts[2]) - 1
            _check_edge(u, v, n)
            edges.append((u, v))
        else:
            raise ParseError(f"unrecognized line {ln!r}")
    if n is None:
        raise ParseError("missing 'p edge' header")
    if m is not None and len(edges) != m:
        raise ParseError(f"header declares {m} edges, found {len(edges)}")
    return GraphInstance.from_edges(n, edges, name=name)


def _check_edge(u: int, v: int, n: int) -> None:
    if u == v:
        raise ParseError(f"self-loop at vertex {u}")
    if not (0 <= u < n and 0 <= v < n):
        raise ParseError(f"vertex index out of range in edge ({u},{v}), n={n}")


def serialize_edge_list(g: GraphInstance) -> str:
    edges = sorted(g.edges)
    lines = [f"{g.n} {len(edges)}"]
    lines.extend(f"{u} {v}" for u, v in edges)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# VRPLIB (EUC_2D subset)


def euc2d_distance(a: Sequence[float], b: Sequence[float]) -> int:
    """TSPLIB nint rounding: int(d + 0.5)."""
    d = math.hypot(a[0] - b[0], a[1] - b[1])
    return int(d + 0.5)


@dataclass(frozen=True, eq=False)
class CvrpInstance:
    name: str
    n_nodes: int
    coords: np.ndarray
    demands: np.ndarray
    capacity: int
    n_vehicles: int
    depot_index: int = 0
    known_optimum: float | None = None

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        demands = np.array(self.demands, dtype=int)
        if coords.shape != (self.n_nodes, 2):
            raise ParseError(f"coords must be ({self.n_nodes}, 2)")
        if demands.shape != (self.n_nodes,):
            raise ParseError(f"demands must have length {self.n_nodes}")
        if demands[self.depot_index] != 0:
            raise ParseError("depot demand must be 0")
        if np.any(demands < 0):
            raise ParseError("demands must be nonnegative")
        if int(demands.sum()) > self.n_vehicles * self.capacity:
            raise ParseError("total demand exceeds fleet capacity")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "demands", demands)

    def distance_matrix(self) -> np.ndarray:
        n = self.n_nodes
        d = np.zeros((n, n), dtype=float)
        for i in range(n):
            for j in range(i + 1, n):
                d[i, j] = d[j, i] = euc2d_distance(self.coords[i], self.coords[j])
        return d

    @property
    def customers(self) -> list[int]:
        return [i for i in range(self.n_nodes) if i != self.depot_index]


def parse_vrplib(text: str, n_vehicles: int | None = None) -> CvrpInstance:
    headers: dict[str, str] = {}
    coords: dict[int, tuple[float, float]] = {}
    demands: dict[int, int] = {}
    depot: int | None = None

    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        ln = lines[i]
        if ln == "EOF":
            break
        if ":" in ln and not ln.endswith("_SECTION"):
            key, value = ln.split(":", 1)
            headers[key.strip()] = value.strip()
            i += 1
            continue
        if ln == "NODE_COORD_SECTION":
            i += 1
            while i < len(lines) and not _is_section_or_eof(lines[i]):
                parts = lines[i].split()
                if len(parts) != 3:
                    raise ParseError(f"bad coord line {lines[i]!r}")
                coords[int(parts[0])] = (float(parts[1]), float(parts[2]))
                i += 1
            continue
        if ln == "DEMAND_SECTION":
            i += 1
            while i < len(lines) and not _is_section_or_eof(lines[i]):
                parts = lines[i].split()
                if len(parts) != 2:
                    raise ParseError(f"bad demand line {lines[i]!r}")
                demands[int(parts[0])] = int(parts[1])
                i += 1
            continue
        if ln == "DEPOT_SECTION":
            i += 1
            while i < len(lines) and lines[i] != "-1" and not _is_section_or_eof(lines[i]):
                depot = int(lines[i])
                i += 1
            if i < len(lines) and lines[i] == "-1":
                i += 1
            continue
        raise ParseError(f"unrecognized line {ln!r}")

    for req in ("NAME", "DIMENSION", "EDGE_WEIGHT_TYPE", "CAPACITY"):
        if req not in headers:
            raise ParseError(f"missing {req} header")
    if headers["EDGE_WEIGHT_TYPE"] != "EUC_2D":
        raise ParseError(f"unsupported EDGE_WEIGHT_TYPE {headers['EDGE_WEIGHT_TYPE']!r}")
    if not coords:
        raise ParseError("missing NODE_COORD_SECTION")
    if not demands:
        raise ParseError("missing DEMAND_SECTION")
    if depot is None:
        raise ParseError("missing DEPOT_SECTION")

    name = headers["NAME"]
    n = int(headers["DIMENSION"])
    if set(coords) != set(range(1, n + 1)) or set(demands) != set(range(1, n + 1)):
        raise ParseError("node ids inconsistent with DIMENSION")

    if n_vehicles is None:
        match = re.search(r"-k(\d+)", name)
        if match:
            n_vehicles = int(match.group(1))
        else:
            total = sum(demands.values())
            n_vehicles = max(1, math.ceil(total / int(headers["CAPACITY"])))

    known_optimum = None
    comment = headers.get("COMMENT", "")
    opt_match = re.search(r"Optimal value:\s*([0-9.]+)", comment)
    if opt_match:
        known_optimum = float(opt_match.group(1))

    return CvrpInstance(
        name=name,
        n_nodes=n,
        coords=np.array([coords[i] for i in range(1, n + 1)]),
        demands=np.array([demands[i] for i in range(1, n + 1)]),
        capacity=int(headers["CAPACITY"]),
        n_vehicles=int(n_vehicles),
        depot_index=depot - 1,
        known_optimum=known_optimum,
    )


def _is_section_or_eof(ln: str) -> bool:
    return ln == "EOF" or ln.endswith("_SECTION")


def serialize_vrplib(inst: CvrpInstance, comment: str = "") -> str:
    lines = [
        f"NAME : {inst.name}",
    ]
    if comment:
        lines.append(f"COMMENT : {comment}")
    lines += [
        "TYPE : CVRP",
        f"DIMENSION : {inst.n_nodes}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        f"CAPACITY : {inst.capacity}",
        "NODE_COORD_SECTION",
    ]
    for i in range(inst.n_nodes):
        x, y = inst.coords[i]
        x_txt = f"{x:g}"
        y_txt = f"{y:g}"
        lines.append(f"{i + 1} {x_txt} {y_txt}")
    lines.append("DEMAND_SECTION")
    for i in range(inst.n_nodes):
        lines.append(f"{i + 1} {int(inst.demands[i])}")
    lines += ["DEPOT_SECTION", f"{inst.depot_index + 1}", "-1", "EOF"]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# exact oracles


def exact_mis(graph: GraphInstance) -> tuple[int, str]:
    """Exact maximum independent set via branch and bound.

    Branches on the max-degree vertex of the remaining subgraph and prunes with
    a greedy clique-cover upper bound (a cover by k cliques caps the
    independence number at k).  Tractable for the sparse curriculum sizes.
    """
    n = graph.n
    if n > 64:
        raise ValueError("exact_mis supports up to 64 vertices")
    if n == 0:
        return 0, ""
    adj = graph.adjacency_masks()
    full = (1 << n) - 1

    def clique_cover_bound(mask: int) -> int:
        cliques: list[int] = []
        m = mask
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            for idx, members in enumerate(cliques):
                if members & ~adj[v] == 0:
                    cliques[idx] = members | (1 << v)
                    break
            else:
                cliques.append(1 << v)
        return len(cliques)

    best_size = 0
    best_set = 0

    def expand(mask: int, size: int, chosen: int) -> None:
        nonlocal best_size, best_set
        if size + mask.bit_count() <= best_size:
            return
        if mask == 0:
            if size > best_size:
                best_size, best_set = size, chosen
            return
        if size + clique_cover_bound(mask) <= best_size:
            return
        # pivot: max degree within the remaining subgraph
        v_best, deg_best = -1, -1
        m = mask
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            deg = (adj[v] & mask).bit_count()
            if deg > deg_best:
                v_best, deg_best = v, deg
        v = v_best
        expand(mask & ~(adj[v] | (1 << v)), size + 1, chosen | (1 << v))
        expand(mask & ~(1 << v), size, chosen)

    expand(full, 0, 0)
    return best_size, index_to_bits(best_set, n)


def enumerate_mis(graph: GraphInstance) -> tuple[int, set[str]]:
    """Exhaustive 2^n enumeration oracle: max size and all maximum independent sets."""
    n = graph.n
    if n > 20:
        raise ValueError("enumeration oracle capped at 20 vertices")
    adj = graph.adjacency_masks()
    best = -1
    winners: set[str] = set()
    for k in range(1 << n):
        ok = True
        m = k
        while m:
            v = (m & -m).bit_length() - 1
            m &= m - 1
            if adj[v] & k:
                ok = False
                break
        if not ok:
            continue
        size = k.bit_count()
        if size > best:
            best = size
            winners = {index_to_bits(k, n)}
        elif size == best:
            winners.add(index_to_bits(k, n))
    return best, winners


def held_karp(dist: np.ndarray, nodes: Sequence[int], depot: int) -> tuple[float, list[int]]:
    """Exact minimum closed tour depot -> nodes -> depot by subset DP."""
    nodes = list(nodes)
    m = len(nodes)
    if m > 13:
        raise ValueError(f"cluster of {m} customers too large for exact routing (max 13)")
    if m == 0:
        return 0.0, [depot]
    if m == 1:
        return 2.0 * float(dist[depot, nodes[0]]), [depot, nodes[0]]

    size = 1 << m
    inf = float("inf")
    dp = [[inf] * m for _ in range(size)]
    parent = [[-1] * m for _ in range(size)]
    for j in range(m):
        dp[1 << j][j] = float(dist[depot, nodes[j]])
    for mask in range(size):
        row = dp[mask]
        for j in range(m):
            cj = row[j]
            if cj == inf or not (mask >> j) & 1:
                continue
            base = nodes[j]
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nmask = mask | (1 << k)
                cand = cj + float(dist[base, nodes[k]])
                if cand < dp[nmask][k]:
                    dp[nmask][k] = cand
                    parent[nmask][k] = j
    full = size - 1
    best_cost, best_j = inf, -1
    for j in range(m):
        cand = dp[full][j] + float(dist[nodes[j], depot])
        if cand < best_cost:
            best_cost, best_j = cand, j
    order = []
    mask, j = full, best_j
    while j != -1:
        order.append(nodes[j])
        pj = parent[mask][j]
        mask &= ~(1 << j)
        j = pj
    order.reverse()
    return best_cost, [depot] + order


def tsp_brute_force(dist: np.ndarray, nodes: Sequence[int], depot: int) -> float:
    """Permutation brute-force tour cost; independent check for held_karp."""
    nodes = list(nodes)
    if not nodes:
        return 0.0
    best = float("inf")
    for perm in permutations(nodes):
        cost = float(dist[depot, perm[0]]) + float(dist[perm[-1], depot])
        for a, b in zip(perm, perm[1:]):
            cost += float(dist[a, b])
        best = min(best, cost)
    return best


def brute_force_qubo_min(q: QuboProblem) -> tuple[float, set[str]]:
    """Exact global minimum over all 2^n assignments and the full minimizer set."""
    if q.n > 24:
        raise ValueError(f"brute force capped at 24 variables, got {q.n}")
    n = q.n
    best = float("inf")
    winners: set[str] = set()
    chunk = 1 << 18
    for start in range(0, 1 << n, chunk):
        stop = min(start + chunk, 1 << n)
        k = np.arange(start, stop, dtype=np.int64)
        e = np.full(k.shape, q.offset, dtype=float)
        for i in range(n):
            a = q.linear[i]
            if a != 0.0:
                e += a * ((k >> i) & 1)
        for (i, j), v in q.quadratic.items():
            if v != 0.0:
                e += v * (((k >> i) & 1) & ((k >> j) & 1))
        emin = float(e.min())
        if emin < best:
            best = emin
            winners = set()
        if emin == best:
            for idx in np.nonzero(e == best)[0]:
                winners.add(index_to_bits(start + int(idx), n))
    return best, winners


# ---------------------------------------------------------------------------
# random instances


def random_er_graph(n: int, p: float, seed: int, name: str = "") -> GraphInstance:
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return GraphInstance.from_edges(n, edges, name=name)
