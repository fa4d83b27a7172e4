import math

import numpy as np
import pytest

from vqpolicy.problems import IsingHamiltonian, index_to_bits, ising_energy_table
from vqpolicy.simulator import (
    CircuitSpec,
    GateOp,
    PauliTerm,
    build_ansatz,
    circuit_stats,
    expectation_diag,
    expectation_pauli,
    resolve_angle,
    sample,
    simulate,
)

# ---------------------------------------------------------------------------
# dense matrix-chain oracle

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1, -1]).astype(complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)


def gate_matrix(name, theta=None):
    if name == "h":
        return H
    if name == "rx":
        return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * X
    if name == "ry":
        return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * Y
    if name == "rz":
        return np.cos(theta / 2) * I2 - 1j * np.sin(theta / 2) * Z
    raise ValueError(name)


def lift_1q(mat, q, n):
    """Little-endian kron: qubit 0 is the least significant index bit."""
    out = np.array([[1.0 + 0j]])
    for k in range(n):
        out = np.kron(mat if k == q else I2, out)
    return out


def lift_2q_cx(ctrl, tgt, n):
    dim = 1 << n
    out = np.zeros((dim, dim), dtype=complex)
    for k in range(dim):
        j = k ^ (1 << tgt) if (k >> ctrl) & 1 else k
        out[j, k] = 1.0
    return out


def lift_2q_cz(a, b, n):
    dim = 1 << n
    diag = np.ones(dim, dtype=complex)
    for k in range(dim):
        if (k >> a) & 1 and (k >> b) & 1:
            diag[k] = -1.0
    return np.diag(diag)


def dense_oracle(circuit, params):
    n = circuit.n_qubits
    state = np.zeros(1 << n, dtype=complex)
    state[0] = 1.0
    for g in circuit.gates:
        if g.name == "cx":
            U = lift_2q_cx(g.qubits[0], g.qubits[1], n)
        elif g.name == "cz":
            U = lift_2q_cz(g.qubits[0], g.qubits[1], n)
        elif g.name == "h":
            U = lift_1q(gate_matrix("h"), g.qubits[0], n)
        else:
            U = lift_1q(gate_matrix(g.name, resolve_angle(g, np.asarray(params, float))), g.qubits[0], n)
        state = U @ state
    return state


def random_circuit(rng, n):
    gates = []
    n_params = int(rng.integers(1, 4))
    for _ in range(int(rng.integers(5, 25))):
        kind = rng.choice(["h", "rx", "ry", "rz", "cx", "cz"])
        if kind in ("cx", "cz"):
            if n < 2:
                continue
            q = rng.choice(n, size=2, replace=False)
            gates.append(GateOp(kind, (int(q[0]), int(q[1]))))
        elif kind == "h":
            gates.append(GateOp("h", (int(rng.integers(n)),)))
        else:
            if rng.random() < 0.5:
                gates.append(GateOp(kind, (int(rng.integers(n)),), angle=float(rng.uniform(-3, 3))))
            else:
                gates.append(
                    GateOp(
                        kind,
                        (int(rng.integers(n)),),
                        pidx=int(rng.integers(n_params)),
                        scale=float(rng.uniform(-2, 2)),
                    )
                )
    return CircuitSpec(n, tuple(gates), n_params)


# ---------------------------------------------------------------------------


def test_hadamard_single_qubit():
    state = simulate(CircuitSpec(1, (GateOp("h", (0,)),), 0), [])
    assert np.allclose(state, [1 / math.sqrt(2), 1 / math.sqrt(2)])


def test_ry_pi_flips_to_one():
    state = simulate(CircuitSpec(1, (GateOp("ry", (0,), angle=math.pi),), 0), [])
    assert abs(state[1]) == pytest.approx(1.0, abs=1e-12)


def test_simulate_matches_dense_oracle():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(1, 7))
        circ = random_circuit(rng, n)
        params = rng.uniform(-math.pi, math.pi, circ.n_params)
        got = simulate(circ, params)
        want = dense_oracle(circ, params)
        assert np.max(np.abs(got - want)) < 1e-8


def test_simulate_validates_inputs():
    circ = CircuitSpec(1, (GateOp("rx", (0,), pidx=0),), 1)
    with pytest.raises(ValueError):
        simulate(circ, [])
    with pytest.raises(ValueError):
        simulate(CircuitSpec(25, (), 0), [])


def test_gateop_validation():
    with pytest.raises(ValueError):
        CircuitSpec(2, (GateOp("cx", (0, 0)),), 0)
    with pytest.raises(ValueError):
        CircuitSpec(2, (GateOp("rx", (0,)),), 0)  # no angle and no pidx
    with pytest.raises(ValueError):
        CircuitSpec(2, (GateOp("rx", (0,), angle=1.0, pidx=0),), 1)
    with pytest.raises(ValueError):
        CircuitSpec(1, (GateOp("h", (1,)),), 0)


def test_expectation_diag_basics():
    h = IsingHamiltonian(1, [1.0], {})
    zero = np.array([1, 0], dtype=complex)
    assert expectation_diag(zero, h) == pytest.approx(1.0)
    hzz = IsingHamiltonian(2, [0.0, 0.0], {(0, 1): 1.0})
    plus2 = np.full(4, 0.5, dtype=complex)
    assert expectation_diag(plus2, hzz) == pytest.approx(0.0, abs=1e-12)


def test_expectation_diag_matches_enumeration():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(1, 6))
        h = IsingHamiltonian(
            n,
            rng.uniform(-1, 1, n),
            {(i, j): float(rng.uniform(-1, 1)) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.6},
            offset=float(rng.uniform(-1, 1)),
        )
        state = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
        state /= np.linalg.norm(state)
        by_enum = sum(
            abs(state[k]) ** 2 * h.energy_of_bits(index_to_bits(k, n)) for k in range(1 << n)
        )
        assert expectation_diag(state, h) == pytest.approx(by_enum, abs=1e-9)
        # and the Z-only Pauli route agrees
        terms = [PauliTerm(h.offset, {})]
        terms += [PauliTerm(float(h.fields[i]), {i: "Z"}) for i in range(n)]
        terms += [PauliTerm(v, {i: "Z", j: "Z"}) for (i, j), v in h.couplings.items()]
        assert expectation_pauli(state, terms) == pytest.approx(expectation_diag(state, h), abs=1e-9)


def test_expectation_pauli_basics():
    plus = np.array([1, 1], dtype=complex) / math.sqrt(2)
    zero = np.array([1, 0], dtype=complex)
    assert expectation_pauli(plus, [PauliTerm(1.0, {0: "X"})]) == pytest.approx(1.0)
    assert expectation_pauli(zero, [PauliTerm(1.0, {0: "X"})]) == pytest.approx(0.0, abs=1e-12)


def test_expectation_pauli_matches_kron_oracle():
    rng = np.random.default_rng(17)
    paulis = {"X": X, "Y": Y, "Z": Z}
    for _ in range(10):
        n = 5
        state = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
        state /= np.linalg.norm(state)
        terms = []
        dense = np.zeros((1 << n, 1 << n), dtype=complex)
        for _ in range(10):
            coeff = float(rng.uniform(-2, 2))
            factors = {}
            for q in rng.choice(n, size=int(rng.integers(1, 4)), replace=False):
                factors[int(q)] = str(rng.choice(["X", "Y", "Z"]))
            terms.append(PauliTerm(coeff, factors))
            mat = np.array([[1.0 + 0j]])
            for q in range(n):
                mat = np.kron(paulis[factors[q]] if q in factors else I2, mat)
            dense += coeff * mat
        want = float(np.real(np.vdot(state, dense @ state)))
        assert expectation_pauli(state, terms) == pytest.approx(want, abs=1e-8)


def test_sample_deterministic_and_counts():
    state = np.array([0, 1], dtype=complex)
    assert sample(state, 100, seed=1) == {"1": 100}
    uniform = np.array([1, 1], dtype=complex) / math.sqrt(2)
    counts = sample(uniform, 10**5, seed=7)
    assert sum(counts.values()) == 10**5
    sigma = math.sqrt(10**5 * 0.25)
    assert abs(counts["0"] - 50000) < 5 * sigma
    assert sample(uniform, 1000, seed=3) == sample(uniform, 1000, seed=3)


def test_efficient_su2_parameter_count_and_gates():
    circ = build_ansatz("efficient_su2", 16, reps=1, entanglement="linear")
    assert circ.n_params == 64
    stats = circuit_stats(circ)
    assert stats["two_qubit_gates"] == 15
    assert stats["total_gates"] == 79  # 64 rotations + 15 entangler gates
    full = build_ansatz("efficient_su2", 4, reps=2, entanglement="full")
    assert full.n_params == 2 * 4 * 3
    assert circuit_stats(full)["two_qubit_gates"] == 2 * 6


def test_qaoa_parameter_count():
    h = IsingHamiltonian(3, [0.5, 0.5, 0.5], {(0, 1): 0.5})
    circ = build_ansatz("qaoa", 3, reps=1, problem=h)
    assert circ.n_params == 2
    circ3 = build_ansatz("qaoa", 3, reps=3, problem=h)
    assert circ3.n_params == 6


def test_ws_qaoa_initial_angles():
    h = IsingHamiltonian(2, [0.5, 0.5], {})
    warm = [0.5, 0.5]
    circ = build_ansatz("ws_qaoa", 2, reps=1, problem=h, warm_start=warm)
    first = circ.gates[0]
    assert first.name == "ry"
    assert first.angle == pytest.approx(math.pi / 2)  # 2*arcsin(sqrt(0.5))
    # beta = 0 leaves the warm-start state invariant up to phase
    state0 = simulate(circ, [0.0, 0.0])
    probs = np.abs(state0) ** 2
    assert probs[0] == pytest.approx(0.25, abs=1e-9)


def test_build_ansatz_validation():
    h = IsingHamiltonian(2, [1.0, 0.0], {})
    with pytest.raises(ValueError):
        build_ansatz("qaoa", 2, reps=1)
    with pytest.raises(ValueError):
        build_ansatz("ws_qaoa", 2, reps=1, problem=h)
    with pytest.raises(ValueError):
        build_ansatz("ws_qaoa", 2, reps=1, problem=h, warm_start=[0.5])
    with pytest.raises(ValueError):
        build_ansatz("efficient_su2", 2, reps=0)


def test_qaoa_against_matrix_exponential_oracle():
    """Compiled cost/mixer layers equal exp(-i gamma H_C) and exp(-i beta sum X)."""
    rng = np.random.default_rng(33)
    for _ in range(10):
        n = int(rng.integers(2, 6))
        h = IsingHamiltonian(
            n,
            rng.uniform(-1, 1, n),
            {(i, j): float(rng.uniform(-1, 1)) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5},
        )
        gamma, beta = rng.uniform(-2, 2, 2)
        circ = build_ansatz("qaoa", n, reps=1, problem=h)
        got = expectation_diag(simulate(circ, [gamma, beta]), h)

        table = ising_energy_table(h) - h.offset  # cost unitary ignores the constant
        cost_u = np.diag(np.exp(-1j * gamma * table))
        mixer_h = sum(lift_1q(X, q, n) for q in range(n))
        evals, evecs = np.linalg.eigh(mixer_h)
        mixer_u = evecs @ np.diag(np.exp(-1j * beta * evals)) @ evecs.conj().T
        plus = np.full(1 << n, 1 / math.sqrt(1 << n), dtype=complex)
        want_state = mixer_u @ (cost_u @ plus)
        want = float(np.real(np.vdot(want_state, (table + h.offset) * want_state)))
        assert got == pytest.approx(want, abs=1e-8)


def test_circuit_stats_depth():
    circ = CircuitSpec(2, (GateOp("h", (0,)), GateOp("h", (1,)), GateOp("cx", (0, 1))), 0)
    stats = circuit_stats(circ)
    assert stats["depth"] == 2
    assert stats["by_name"] == {"h": 2, "cx": 1}
