import math

import numpy as np
import pytest

from vqpolicy.problems import (
    GraphInstance,
    IsingHamiltonian,
    index_to_bits,
    is_independent_set,
    ising_energy_table,
    mis_to_qubo,
    qubo_to_ising,
    QuboProblem,
)
from vqpolicy.simulator import PauliTerm, expectation_pauli
from vqpolicy.solvers import (
    SolverConfig,
    magic_round,
    qrao_encoding_state,
    qrao_group,
    qrao_relax,
    run_qrao,
    semideterministic_round,
)

I2 = np.eye(2, dtype=complex)
PAULIS = {
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1, -1]).astype(complex),
}


def dense_pauli_sum(terms, n_qubits):
    dim = 1 << n_qubits
    out = np.zeros((dim, dim), dtype=complex)
    for t in terms:
        mat = np.array([[1.0 + 0j]])
        for q in range(n_qubits):
            mat = np.kron(PAULIS[t.factors[q]] if q in t.factors else I2, mat)
        out += t.coefficient * mat
    return out


def random_ising(rng, n, p=0.6):
    return IsingHamiltonian(
        n,
        rng.uniform(-1, 1, n),
        {(i, j): float(rng.uniform(-1, 1)) for i in range(n) for j in range(i + 1, n) if rng.random() < p},
        offset=float(rng.uniform(-1, 1)),
    )


# ---------------------------------------------------------------------------
# grouping


def test_grouping_edgeless():
    q = QuboProblem(6, np.zeros(6), {})
    g = qrao_group(q, "3:1")
    assert g.n_qubits == 2
    assert sorted(v for b in g.buckets for v in b) == list(range(6))


def test_grouping_k3_all_singletons():
    q = mis_to_qubo(GraphInstance.from_edges(3, [(0, 1), (1, 2), (0, 2)]), 2.0)
    g = qrao_group(q, "3:1")
    assert g.n_qubits == 3
    assert all(len(b) == 1 for b in g.buckets)


def test_grouping_respects_interactions():
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        h = random_ising(rng, n)
        q = QuboProblem(n, np.zeros(n), dict(h.couplings))
        for ratio in ("3:1", "2:1"):
            g = qrao_group(q, ratio)
            slot = g.slot_of()
            assert set(slot) == set(range(n))
            for (i, j), v in h.couplings.items():
                if v != 0.0:
                    assert slot[i][0] != slot[j][0]
            assert all(len(b) <= g.arity for b in g.buckets)
            assert g.n_qubits >= math.ceil(n / g.arity)


def test_grouping_rook_structure_compresses_48_to_16():
    # 12x4 assignment-style interaction graph: cliques within each row and column
    n = 48
    pairs = []
    for r in range(12):
        row = [r * 4 + v for v in range(4)]
        pairs += [(a, b) for i, a in enumerate(row) for b in row[i + 1 :]]
    for v in range(4):
        col = [r * 4 + v for r in range(12)]
        pairs += [(a, b) for i, a in enumerate(col) for b in col[i + 1 :]]
    q = QuboProblem(n, np.zeros(n), {p: 1.0 for p in pairs})
    g = qrao_group(q, "3:1")
    assert g.n_qubits == 16


# ---------------------------------------------------------------------------
# relaxation


def test_relax_single_spin_uses_sqrt3_x():
    h = IsingHamiltonian(1, [1.0], {}, offset=0.5)
    g = qrao_group(QuboProblem(1, [0.0], {}), "3:1")
    terms = qrao_relax(h, g)
    assert terms[0].factors == {} and terms[0].coefficient == pytest.approx(0.5)
    assert terms[1].factors == {0: "X"}
    assert terms[1].coefficient == pytest.approx(math.sqrt(3.0))


def test_encoding_state_reproduces_spins_exactly():
    rng = np.random.default_rng(12)
    for ratio in ("3:1", "2:1"):
        for _ in range(10):
            n = int(rng.integers(1, 8))
            h = random_ising(rng, n)
            q = QuboProblem(n, np.zeros(n), dict(h.couplings))
            g = qrao_group(q, ratio)
            bits = "".join(rng.choice(["0", "1"]) for _ in range(n))
            state = qrao_encoding_state(g, bits)
            root_m = math.sqrt(g.arity)
            slot = g.slot_of()
            for var in range(n):
                qb, p = slot[var]
                val = root_m * expectation_pauli(state, [PauliTerm(1.0, {qb: p})])
                want = 1.0 - 2.0 * int(bits[var])
                assert val == pytest.approx(want, abs=1e-9)


def test_encoding_state_evaluates_to_classical_energy():
    rng = np.random.default_rng(13)
    for _ in range(10):
        n = int(rng.integers(1, 9))
        h = random_ising(rng, n)
        q = QuboProblem(n, np.zeros(n), dict(h.couplings))
        g = qrao_group(q, "3:1")
        terms = qrao_relax(h, g)
        bits = index_to_bits(int(rng.integers(1 << n)), n)
        state = qrao_encoding_state(g, bits)
        assert expectation_pauli(state, terms) == pytest.approx(h.energy_of_bits(bits), abs=1e-9)


def test_relaxation_lower_bounds_classical_minimum():
    rng = np.random.default_rng(14)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        h = random_ising(rng, n)
        q = QuboProblem(n, np.zeros(n), dict(h.couplings))
        g = qrao_group(q, "3:1")
        terms = qrao_relax(h, g)
        dense = dense_pauli_sum(terms, g.n_qubits)
        ground = float(np.linalg.eigvalsh(dense)[0])
        classical = float(ising_energy_table(h).min())
        assert ground <= classical + 1e-9


def test_relax_rejects_invalid_grouping():
    h = IsingHamiltonian(2, [0.0, 0.0], {(0, 1): 1.0})
    from vqpolicy.solvers import QraoGrouping

    bad = QraoGrouping(buckets=((0, 1),), ratio="3:1")
    with pytest.raises(ValueError):
        qrao_relax(h, bad)


# ---------------------------------------------------------------------------
# rounding


def test_semideterministic_recovers_encodings():
    rng = np.random.default_rng(15)
    for ratio in ("3:1", "2:1"):
        for _ in range(20):
            n = int(rng.integers(1, 10))
            h = random_ising(rng, n)
            g = qrao_group(QuboProblem(n, np.zeros(n), dict(h.couplings)), ratio)
            bits = index_to_bits(int(rng.integers(1 << n)), n)
            assert semideterministic_round(qrao_encoding_state(g, bits), g) == bits


def test_semideterministic_tie_break_to_zero():
    from vqpolicy.solvers import QraoGrouping

    g = QraoGrouping(buckets=((0,),), ratio="3:1")
    zero_x = np.array([1, 0], dtype=complex)  # <X> = 0 exactly
    assert semideterministic_round(zero_x, g) == "0"
    one = np.array([0, 1], dtype=complex)  # slot X: <X> = 0 -> tie -> 0
    assert semideterministic_round(one, g) == "0"


def test_semideterministic_z_slot_reads_one():
    from vqpolicy.solvers import QraoGrouping

    g = QraoGrouping(buckets=((0, 1, 2),), ratio="3:1")
    one = np.array([0, 1], dtype=complex)  # <Z> = -1 -> bit 2 (Z slot) reads 1
    assert semideterministic_round(one, g)[2] == "1"


def test_magic_round_deterministic_and_modal():
    rng = np.random.default_rng(16)
    for ratio in ("3:1", "2:1"):
        n = 5
        h = random_ising(rng, n, p=0.3)
        g = qrao_group(QuboProblem(n, np.zeros(n), dict(h.couplings)), ratio)
        bits = index_to_bits(int(rng.integers(1 << n)), n)
        state = qrao_encoding_state(g, bits)
        counts = magic_round(state, g, 16384, seed=77)
        assert counts == magic_round(state, g, 16384, seed=77)
        assert sum(counts.values()) == 16384
        assert max(counts, key=counts.get) == bits


def test_magic_round_single_qubit_statistics():
    # |0> measured in the 2:1 bases: Z slot decodes 0 with probability (1+1/sqrt2)/2
    from vqpolicy.solvers import QraoGrouping

    g = QraoGrouping(buckets=((0, 1),), ratio="2:1")
    zero = np.array([1, 0], dtype=complex)
    shots = 40000
    counts = magic_round(zero, g, shots, seed=5)
    z_zero = sum(c for b, c in counts.items() if b[1] == "0")  # var 1 sits on the Z slot
    want = (1.0 + 1.0 / math.sqrt(2.0)) / 2.0
    sigma = math.sqrt(shots * want * (1 - want))
    assert abs(z_zero - want * shots) < 5 * sigma


# ---------------------------------------------------------------------------
# full runs


def test_run_qrao_edgeless_six_variables():
    g6 = GraphInstance.from_edges(6, [])
    ising = qubo_to_ising(mis_to_qubo(g6, 2.0))
    cfg = SolverConfig(family="qrao", maxiter=400, sampler_shots=1024, seed=9)
    raw = run_qrao(ising, lambda b: True, cfg)
    assert raw.best_bitstring == "111111"
    assert raw.best_energy == pytest.approx(-6.0)


def test_run_qrao_path_p3():
    p3 = GraphInstance.from_edges(3, [(0, 1), (1, 2)])
    ising = qubo_to_ising(mis_to_qubo(p3, 2.0))
    cfg = SolverConfig(family="qrao", maxiter=300, sampler_shots=2048, seed=7)
    raw = run_qrao(ising, lambda b: is_independent_set(p3, b), cfg)
    assert raw.best_bitstring == "101"
    assert raw.best_energy == pytest.approx(-2.0)


def test_run_qrao_semideterministic_rounding():
    g6 = GraphInstance.from_edges(6, [])
    ising = qubo_to_ising(mis_to_qubo(g6, 2.0))
    cfg = SolverConfig(
        family="qrao", qrao_rounding="semideterministic", maxiter=400, sampler_shots=64, seed=21
    )
    raw = run_qrao(ising, lambda b: True, cfg)
    assert raw.counts == {raw.best_bitstring: 64}
    assert raw.best_bitstring == "111111"


def test_run_qrao_compression_width():
    # 48-variable rook-structured problem compresses to 16 qubits (checked via grouping)
    n = 48
    pairs = {}
    for r in range(12):
        row = [r * 4 + v for v in range(4)]
        pairs.update({(a, b): 1.0 for i, a in enumerate(row) for b in row[i + 1 :]})
    for v in range(4):
        col = [r * 4 + v for r in range(12)]
        pairs.update({(a, b): 1.0 for i, a in enumerate(col) for b in col[i + 1 :]})
    q = QuboProblem(n, np.zeros(n), pairs)
    assert qrao_group(q, "3:1").n_qubits == 16
