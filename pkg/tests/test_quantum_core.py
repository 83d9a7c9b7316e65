from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qerl.quantum_core import (
    DensityMatrix,
    LayoutError,
    MeasurementError,
    RegisterLayout,
    ResourceError,
    StateVector,
    UnitaryOp,
    apply_unitary,
    born_probabilities,
    dephase,
    measure_registers,
    partial_trace,
    trace_distance,
)


def random_state(layout, rng):
    d = RegisterLayout(layout).total_dim
    return StateVector.normalized(layout, rng.normal(size=d) + 1j * rng.normal(size=d))


def random_unitary(d, rng):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def full_operator(dims, targets, u):
    """Embed ``u`` on ``targets`` into the full space by explicit index arithmetic."""
    layout = RegisterLayout(dims)
    tl = layout.sub(targets)
    d = layout.total_dim
    out = np.zeros((d, d), dtype=complex)
    for col in range(d):
        digs = layout.digits(col)
        tin = tl.flat_index([digs[t] for t in targets])
        for tout in range(tl.total_dim):
            new = list(digs)
            for t, v in zip(targets, tl.digits(tout)):
                new[t] = v
            out[layout.flat_index(new), col] += u[tout, tin]
    return out


def test_layout_basics():
    lay = RegisterLayout((2, 3, 4))
    assert lay.total_dim == 24
    assert lay.digits(lay.flat_index((1, 2, 3))) == (1, 2, 3)
    with pytest.raises(LayoutError):
        lay.check_registers([3])
    with pytest.raises(LayoutError):
        RegisterLayout((2, 0))


def test_identity_leaves_state_unchanged():
    s = random_state((2, 3), np.random.default_rng(0))
    out = apply_unitary(s, UnitaryOp((0, 1), np.eye(6)))
    assert np.allclose(out.amplitudes, s.amplitudes, atol=1e-14)


def test_exchange_on_basis_state():
    s = StateVector.basis((2,), 0)
    out = apply_unitary(s, UnitaryOp((0,), [[0, 1], [1, 0]]))
    assert np.allclose(out.amplitudes, [0, 1])


def test_diagonal_phase_on_uniform_state():
    # oracle: a dense matrix-vector product written out by hand
    diag = np.diag([1, 1, 1, -1]).astype(complex)
    expected = diag @ (np.ones(4) / 2)
    out = apply_unitary(StateVector.uniform((4,)), UnitaryOp((0,), diag))
    assert np.allclose(out.amplitudes, expected, atol=1e-15)
    assert np.allclose(out.amplitudes, [0.5, 0.5, 0.5, -0.5])
    structured = apply_unitary(StateVector.uniform((4,)), UnitaryOp((0,), diagonal=[1, 1, 1, -1]))
    assert np.allclose(structured.amplitudes, expected)


def test_dimension_mismatch_raises():
    s = StateVector.uniform((2, 2))
    with pytest.raises(LayoutError):
        apply_unitary(s, UnitaryOp((0,), np.eye(3)))


def test_non_unitary_rejected():
    with pytest.raises(ValueError):
        UnitaryOp((0,), [[1, 1], [0, 1]])


def test_dense_cap():
    with pytest.raises(ResourceError):
        StateVector.basis((2**15,), 0)


def test_permutation_and_dagger_match_dense():
    rng = np.random.default_rng(3)
    perm = rng.permutation(6)
    phases = np.exp(1j * rng.uniform(0, 2 * np.pi, 6))
    op = UnitaryOp((1, 0), permutation=perm, phases=phases)
    dense = UnitaryOp((1, 0), op.matrix)
    s = random_state((2, 3), rng)
    assert np.allclose(apply_unitary(s, op).amplitudes, apply_unitary(s, dense).amplitudes)
    back = apply_unitary(apply_unitary(s, op), op.dagger())
    assert np.allclose(back.amplitudes, s.amplitudes)


def test_measure_basis_state():
    out, post, p = measure_registers(StateVector.basis((4,), 1), [0], np.random.default_rng(0))
    assert out == (1,) and p == pytest.approx(1.0)
    assert np.allclose(post.amplitudes, [0, 1, 0, 0])


def test_measure_bell_state():
    bell = StateVector((2, 2), np.array([1, 0, 0, 1]) / math.sqrt(2))
    assert np.allclose(born_probabilities(bell, [0]), [0.5, 0.5])
    out, post, p = measure_registers(bell, [0], outcome=(1,))
    assert p == pytest.approx(0.5)
    assert np.allclose(post.amplitudes, [0, 0, 0, 1])


def test_measure_after_one_grover_iteration():
    # N=4, marked index 2: one iteration reaches the marked state exactly
    s = StateVector.uniform((4,))
    oracle = UnitaryOp((0,), diagonal=[1, 1, -1, 1])
    diffusion = UnitaryOp((0,), 2 * np.full((4, 4), 0.25) - np.eye(4))
    s = apply_unitary(apply_unitary(s, oracle), diffusion)
    _, _, p = measure_registers(s, [0], outcome=(2,))
    assert abs(p - 1.0) < 1e-9


def test_forced_zero_probability_outcome():
    with pytest.raises(MeasurementError):
        measure_registers(StateVector.basis((2,), 0), [0], outcome=(1,))


def test_partial_trace_product_and_bell():
    rng = np.random.default_rng(5)
    a = random_state((3,), rng).to_density()
    b = random_state((2,), rng).to_density()
    prod = a.tensor(b)
    assert trace_distance(partial_trace(prod, [0]), a) < 1e-12
    assert trace_distance(partial_trace(prod, [1]), b) < 1e-12
    bell = StateVector((2, 2), np.array([1, 0, 0, 1]) / math.sqrt(2))
    assert np.allclose(partial_trace(bell.to_density(), [0]).matrix, np.eye(2) / 2)
    with pytest.raises(LayoutError):
        partial_trace(bell.to_density(), [])


def test_partial_trace_of_classically_copied_state():
    # a classical-basis state on (A, C) with C copied into a fresh register
    probs = np.array([0.1, 0.2, 0.3, 0.4])
    base = DensityMatrix.from_probabilities((2, 2), probs)
    ext = np.zeros(8)
    for i, p in enumerate(probs):
        a, c = divmod(i, 2)
        ext[(a * 2 + c) * 2 + c] = p
    extended = DensityMatrix.from_probabilities((2, 2, 2), ext)
    assert trace_distance(partial_trace(extended, [0, 1]), base) < 1e-12


def test_partial_trace_reorders_kept_registers():
    rng = np.random.default_rng(6)
    a = random_state((2,), rng).to_density()
    b = random_state((3,), rng).to_density()
    joint = a.tensor(b)
    swapped = partial_trace(joint, [1, 0])
    assert swapped.layout.dims == (3, 2)
    assert np.allclose(swapped.matrix, b.tensor(a).matrix)


def test_trace_distance_examples():
    rho = DensityMatrix.from_probabilities((2,), [0.75, 0.25])
    sigma = DensityMatrix.maximally_mixed((2,))
    # eigenvalues of the difference are +-0.25
    assert trace_distance(rho, sigma) == pytest.approx(0.25, abs=1e-15)
    assert trace_distance(rho, rho) == 0
    z0 = StateVector.basis((2,), 0).to_density()
    z1 = StateVector.basis((2,), 1).to_density()
    assert trace_distance(z0, z1) == pytest.approx(1.0)
    with pytest.raises(LayoutError):
        trace_distance(z0, DensityMatrix.maximally_mixed((3,)))


def test_density_validation():
    with pytest.raises(ValueError):
        DensityMatrix((2,), np.diag([0.6, 0.6]))
    with pytest.raises(ValueError):
        DensityMatrix((2,), np.diag([1.5, -0.5]))


def test_dephase_kills_coherence_on_one_register():
    plus = StateVector((2, 2), np.full(4, 0.5)).to_density()
    out = dephase(plus, [0])
    expected = np.kron(np.eye(2) / 2, np.full((2, 2), 0.5))
    assert np.allclose(out.matrix, expected)


dims_strategy = st.lists(st.integers(1, 4), min_size=1, max_size=3)


@settings(max_examples=60, deadline=None)
@given(dims=dims_strategy, seed=st.integers(0, 2**32 - 1), data=st.data())
def test_unitary_matches_explicit_embedding_and_preserves_norm(dims, seed, data):
    rng = np.random.default_rng(seed)
    n = len(dims)
    targets = data.draw(st.permutations(range(n)).map(lambda p: p[: max(1, len(p) - 1)]))
    lay = RegisterLayout(tuple(dims))
    d_t = lay.sub(targets).total_dim
    u = random_unitary(d_t, rng)
    s = random_state(tuple(dims), rng)
    out = apply_unitary(s, UnitaryOp(targets, u))
    assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-10
    assert np.allclose(out.amplitudes, full_operator(tuple(dims), list(targets), u) @ s.amplitudes, atol=1e-12)
    rho = apply_unitary(s.to_density(), UnitaryOp(targets, u))
    assert np.max(np.abs(rho.matrix - out.to_density().matrix)) < 1e-10
    assert abs(np.trace(rho.matrix) - 1) < 1e-10


@settings(max_examples=60, deadline=None)
@given(dims=dims_strategy, seed=st.integers(0, 2**32 - 1), data=st.data())
def test_born_probabilities_sum_to_one(dims, seed, data):
    s = random_state(tuple(dims), np.random.default_rng(seed))
    regs = data.draw(st.permutations(range(len(dims))))
    assert abs(born_probabilities(s, regs).sum() - 1) < 1e-10


@settings(max_examples=60, deadline=None)
@given(dims=st.lists(st.integers(1, 3), min_size=2, max_size=3), seed=st.integers(0, 2**32 - 1),
       a=st.floats(0, 1), data=st.data())
def test_partial_trace_is_linear(dims, seed, a, data):
    rng = np.random.default_rng(seed)
    lay = tuple(dims)
    rho = random_state(lay, rng).to_density()
    sigma = random_state(lay, rng).to_density()
    keep = data.draw(st.permutations(range(len(dims))).map(lambda p: p[:1 + len(p) // 2]))
    mix = DensityMatrix(lay, a * rho.matrix + (1 - a) * sigma.matrix)
    lhs = partial_trace(mix, keep).matrix
    rhs = a * partial_trace(rho, keep).matrix + (1 - a) * partial_trace(sigma, keep).matrix
    assert np.max(np.abs(lhs - rhs)) < 1e-10
    pure = partial_trace(random_state(lay, rng), keep)
    assert abs(np.trace(pure.matrix) - 1) < 1e-10


def test_block_kind_matches_dense():
    rng = np.random.default_rng(8)
    blocks = np.stack([random_unitary(2, rng) for _ in range(3)])
    op = UnitaryOp((1, 0), blocks=blocks)
    s = random_state((2, 3), rng)
    dense = UnitaryOp((1, 0), op.matrix)
    assert np.allclose(apply_unitary(s, op).amplitudes, apply_unitary(s, dense).amplitudes)
    assert np.allclose(apply_unitary(apply_unitary(s, op), op.dagger()).amplitudes, s.amplitudes)
    with pytest.raises(LayoutError):
        apply_unitary(random_state((3, 2), rng), UnitaryOp((0, 1), blocks=np.stack([np.eye(3)] * 2)))
