from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qerl.agent_env import (
    Alphabet,
    EpochalDeterministicEnv,
    StochasticEpochalEnv,
    ValidationError,
    sequence_digits,
)
from qerl.oracles import (
    build_counting_oracle,
    build_phase_flip_oracle,
    build_purified_env_unitary,
    build_reversible_env_unitary,
    build_stochastic_oracle,
    export_oracle,
    load_oracle_matrix,
    percept_block_code,
)
from qerl.quantum_core import RegisterLayout, StateVector, born_probabilities


def table_env(n, M, seed, n_percepts=2, lam_max=1, terminal_only=True, max_winners=None):
    rng = np.random.default_rng(seed)
    alphabet = Alphabet.indexed(n, n_percepts)
    N = n**M
    pt = np.zeros((N, M), dtype=int)
    rt = np.zeros((N, M), dtype=int)
    for i in range(M):
        block = n ** (M - i - 1)
        pref = rng.integers(0, n_percepts + 1, N // block)
        pt[:, i] = np.repeat(pref, block)
        if not terminal_only or i == M - 1:
            rt[:, i] = np.repeat(rng.integers(0, lam_max + 1, N // block), block)
    return EpochalDeterministicEnv(alphabet, M, pt, rt, lambda_max=lam_max)


def test_reversible_identity_for_empty_responses():
    env = EpochalDeterministicEnv(Alphabet.indexed(2), 2, np.zeros((4, 2)), np.zeros(4))
    ue = build_reversible_env_unitary(env)
    D = ue.layout.dims[1]
    for a in range(4):
        psi = StateVector.basis(ue.layout, a * D)
        assert np.allclose(ue.apply(psi).amplitudes, psi.amplitudes)


def test_reversible_m1_matches_table():
    # n=2, M=1: a0 -> s0 (index 1), a1 -> s1 (index 2); no rewards
    env = EpochalDeterministicEnv(Alphabet.indexed(2, 2), 1, [[1], [2]], [0, 0])
    ue = build_reversible_env_unitary(env)
    code = percept_block_code(env)
    # no rewards declared, so the block carries percept bits only
    assert (code.percept_bits, code.reward_bits) == (2, 0)
    D = code.dim
    expected = np.zeros((2 * D, 2 * D))
    for a, p in ((0, 1), (1, 2)):
        c = p
        for y in range(D):
            expected[a * D + (y ^ c), a * D + y] = 1
    assert np.array_equal(ue.unitary.matrix.real, expected)


def test_reversible_block_dim_mismatch():
    env = EpochalDeterministicEnv.single_win(2, 2, 1)
    with pytest.raises(ValidationError):
        build_reversible_env_unitary(env, block_dim=3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 3), M=st.integers(1, 2))
def test_reversible_is_self_inverse_and_fair(seed, n, M):
    env = table_env(n, M, seed, lam_max=2, terminal_only=False)
    ue = build_reversible_env_unitary(env)
    perm = ue.unitary.permutation
    assert np.array_equal(perm[perm], np.arange(perm.size))
    if perm.size <= 256:
        U = ue.unitary.matrix
        assert np.max(np.abs(U @ U - np.eye(U.shape[0]))) < 1e-9
    code = ue.info["block_code"]
    D = code.dim
    # classical access: |a>|0> measures to the environment's response table
    for a in range(env.N):
        out = int(perm[a * D])
        assert out // D == a
        resp = code.decode(out % D)
        env.reset()
        assert resp == [env.step(x) for x in sequence_digits(a, n, M)]


def test_phase_flip_examples():
    none = EpochalDeterministicEnv(Alphabet.indexed(2), 2, np.zeros((4, 2)), np.zeros(4))
    assert np.allclose(build_phase_flip_oracle(none).unitary.diagonal, 1)
    env = EpochalDeterministicEnv.single_win(2, 2, 3)
    assert np.allclose(build_phase_flip_oracle(env).unitary.matrix, np.diag([1, 1, 1, -1]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 3), M=st.integers(1, 4))
def test_phase_flip_matches_brute_force(seed, n, M):
    env = table_env(n, M, seed)
    oracle = build_phase_flip_oracle(env)
    brute = np.array([(-1.0) ** env.total_reward(a) for a in range(env.N)])
    d = oracle.unitary.diagonal
    assert np.array_equal(d.real, brute) and np.all(d.imag == 0)
    assert int(np.sum(d.real < 0)) == len(env.winners())


def test_phase_flip_index_route_for_large_block():
    env = EpochalDeterministicEnv.single_win(2, 8, 77)
    oracle = build_phase_flip_oracle(env)
    assert oracle.info["route"] == "index"
    assert np.flatnonzero(oracle.unitary.diagonal.real < 0).tolist() == [77]
    small = build_phase_flip_oracle(EpochalDeterministicEnv.single_win(2, 3, 5))
    assert small.info["route"] == "dense"


def test_phase_flip_rejects_non_binary_totals():
    env = table_env(2, 2, 3, lam_max=1, terminal_only=False)
    if env.total_rewards().max() < 2:
        env = EpochalDeterministicEnv(Alphabet.indexed(2), 2, np.zeros((4, 2)), [[1, 1]] * 4)
    with pytest.raises(ValidationError):
        build_phase_flip_oracle(env)


def test_query_accounting():
    env = EpochalDeterministicEnv.single_win(2, 3, 2)
    oracle = build_phase_flip_oracle(env)
    psi = StateVector.uniform(oracle.layout)
    for _ in range(5):
        psi = oracle.apply(psi)
    assert oracle.query_counter == 5 and oracle.interaction_steps == 15


def counting_env():
    # M=3 with per-step rewards; sequence (0, 1, 1) earns (0, 1, 1)
    alphabet = Alphabet.indexed(2)
    return EpochalDeterministicEnv.from_functions(alphabet, 3, lambda p: 0, lambda p: int(p[-1] == 1))


def test_counting_examples():
    env = counting_env()
    oracle = build_counting_oracle(env)
    D = oracle.info["count_dim"]
    assert D == 4
    U = oracle.unitary.matrix
    zero = 0  # sequence (0, 0, 0) has zero reward
    assert U[zero * D + 2, zero * D + 2] == 1
    a = 0b011
    col = U[:, a * D]
    assert np.flatnonzero(col)[0] == a * D + 2
    assert np.allclose(U @ U, np.eye(U.shape[0]))


def test_counting_undersized_register():
    with pytest.raises(ValidationError):
        build_counting_oracle(counting_env(), count_dim=2)
    with pytest.raises(ValidationError):
        build_counting_oracle(counting_env(), count_dim=6)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_counting_with_explicit_percepts(seed):
    env = table_env(2, 2, seed, n_percepts=1, lam_max=1, terminal_only=False)
    full = build_counting_oracle(env, include_percepts=True)
    U = full.unitary.matrix
    assert np.allclose(U @ U, np.eye(U.shape[0]))
    _, P, D = full.layout.dims
    reduced = build_counting_oracle(env).unitary.matrix
    # on the percept-register zero subspace both versions agree
    for a in range(env.N):
        for y in range(D):
            col = U[:, (a * P) * D + y]
            out = int(np.flatnonzero(col)[0])
            assert out // D == a * P
            assert np.flatnonzero(reduced[:, a * D + y])[0] == a * D + out % D
    # block-diagonal over the sequence register
    blocks = U.reshape(env.N, P * D, env.N, P * D)
    for a in range(env.N):
        for b in range(env.N):
            if a != b:
                assert not blocks[a, :, b, :].any()


def test_stochastic_oracle_examples():
    env = StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[0.0, 1.0])
    oracle = build_stochastic_oracle(env)
    out = oracle.apply(StateVector.basis(oracle.layout, (0, 0)))
    assert np.allclose(out.amplitudes, [1, 0, 0, 0])
    out = oracle.apply(StateVector.basis(oracle.layout, (1, 0)))
    assert np.allclose(out.amplitudes, [0, 0, 0, 1])
    env = StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[0.25, 0.5])
    out = build_stochastic_oracle(env).apply(StateVector.basis((2, 2), (0, 0)))
    assert np.allclose(out.amplitudes[:2], [math.sqrt(0.75), 0.5])
    assert abs(born_probabilities(out, [1])[1] - 0.25) < 1e-10


@settings(max_examples=20, deadline=None)
@given(probs=st.lists(st.floats(0, 1), min_size=4, max_size=4), reflect=st.booleans())
def test_stochastic_marginals(probs, reflect):
    env = StochasticEpochalEnv(Alphabet.indexed(2), 2, reward_prob=probs)
    oracle = build_stochastic_oracle(env, self_inverse=reflect)
    U = oracle.unitary.matrix
    for a in range(4):
        col = U[:, 2 * a]
        assert abs(abs(col[2 * a + 1]) ** 2 - probs[a]) < 1e-10
    if reflect:
        assert np.allclose(U @ U, np.eye(8), atol=1e-9)


def test_stochastic_rejects_bad_probability():
    env = StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[0.5, 0.5])
    object.__setattr__(env, "reward_prob", np.array([0.5, 1.2]))
    with pytest.raises(ValidationError):
        build_stochastic_oracle(env)


def test_purified_invasion_overlap():
    env = StochasticEpochalEnv.invasion_game(2, 1)
    se = build_purified_env_unitary(env)
    N, S, _, L = se.layout.dims
    # |pi> and |pi_target> written out explicitly
    pi = np.zeros((N, S, S, L))
    for a in range(N):
        for s in range(S):
            pi[a, s, s, env.pair_rewards[s, a]] = math.sqrt(0.5 / N)
    target = pi.copy()
    target[..., 0] = 0
    target /= np.linalg.norm(target)
    gamma = abs(np.vdot(pi.ravel(), target.ravel()))
    assert gamma**2 == pytest.approx(0.5)
    assert se.info["gamma_sq"] == pytest.approx(gamma**2)
    prepared = np.zeros(se.layout.total_dim, dtype=complex)
    prepared.reshape(N, S * S * L)[:, 0] = 1 / math.sqrt(N)
    out = se.apply_array(prepared)
    assert np.allclose(out, pi.ravel())


@pytest.mark.parametrize("M", [1, 2, 3])
def test_purified_reward_marginal_matches_classical_average(M):
    env = StochasticEpochalEnv.invasion_game(2, M)
    se = build_purified_env_unitary(env)
    N = env.N
    prepared = np.zeros(se.layout.total_dim, dtype=complex)
    prepared.reshape(N, -1)[:, 0] = 1 / math.sqrt(N)
    out = StateVector(se.layout, se.apply_array(prepared))
    p_reward = born_probabilities(out, [3])[1]
    assert abs(p_reward - env.reward_prob.mean()) < 1e-10
    assert se.info["gamma_sq"] == pytest.approx(0.5**M)


def test_purified_deterministic_point_mass():
    # one percept sequence with probability 1: S_E reduces to a reward write
    alphabet = Alphabet.indexed(2, 1)
    env = StochasticEpochalEnv(alphabet, 2, percept_probs=[1.0], reward_table=[[0, 0, 1, 0]])
    se = build_purified_env_unitary(env)
    for a in range(4):
        psi = np.zeros(se.layout.total_dim, dtype=complex)
        psi.reshape(4, -1)[a, 0] = 1
        out = se.apply_array(psi).reshape(4, -1)
        assert abs(out[a, int(a == 2)]) == pytest.approx(1)


def test_purified_requires_percept_distribution():
    env = StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[0.5, 0.5])
    with pytest.raises(ValidationError):
        build_purified_env_unitary(env)


def test_export_roundtrip(tmp_path):
    env = EpochalDeterministicEnv.single_win(2, 2, 1)
    for oracle in (build_phase_flip_oracle(env), build_reversible_env_unitary(env),
                   build_purified_env_unitary(StochasticEpochalEnv.invasion_game(2, 1))):
        path = tmp_path / f"{oracle.kind}.bin"
        header = export_oracle(oracle, path)
        loaded_header, mat = load_oracle_matrix(path)
        assert loaded_header == header
        assert header["env_fingerprint"] == oracle.env_fingerprint
        assert np.array_equal(mat, oracle.unitary.matrix)
    raw = path.read_bytes()
    hlen = int.from_bytes(raw[4:8], "little")
    first = np.frombuffer(raw[8 + hlen:8 + hlen + 16], dtype="<c16")[0]
    assert first == mat[0, 0]
