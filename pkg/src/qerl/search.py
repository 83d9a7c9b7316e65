"""Amplitude-amplification search and estimation driven by environment oracles.

Query accounting: a *query* is one use of the oracle that stands for one
epoch of interaction (M steps).  Candidate verification with the classical
environment is also one epoch and is counted as a query, so
``interaction_steps == oracle_queries * M`` for every outcome.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agent_env import StochasticEpochalEnv
from .constants import (
    DENSE_DIM_CAP,
    DISENTANGLE_TOL,
    GROWTH_FACTOR,
    MAX_FIND_BUDGET_FACTOR,
    SEARCH_BUDGET_FACTOR,
)
from .oracles import OracleHandle
from .quantum_core import RegisterLayout, ResourceError, UnitaryOp, apply_unitary_array


class NoRewardingPairError(ValueError):
    """The purified environment has zero overlap with any rewarded pair."""


@dataclass
class SearchOutcome:
    found: int | None
    oracle_queries: int
    interaction_steps: int
    success: bool
    iterations: int = 0
    verifications: int = 0
    value: float | None = None
    extra: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_record(self) -> dict:
        return {"found": self.found, "queries": self.oracle_queries,
                "interaction_steps": self.interaction_steps, "success": self.success}


@dataclass
class EstimateOutcome:
    sequence: int
    theta_estimate: float
    bits: int
    grid_index: int
    oracle_queries: int
    interaction_steps: int

    @property
    def p_estimate(self) -> float:
        return math.sin(self.theta_estimate) ** 2


def default_budget(N: int, factor: float = SEARCH_BUDGET_FACTOR) -> int:
    return max(1, int(math.floor(factor * math.sqrt(N))))


def randomized_schedule(sample_after: Callable[[int], int], verify: Callable[[int], bool], N: int,
                        rng: np.random.Generator, budget: int, growth: float = GROWTH_FACTOR):
    """Amplitude amplification for an unknown number of good items.

    Each round draws ``j`` uniformly from ``{0, ..., ceil(m) - 1}``, runs ``j``
    iterations, measures, and verifies the candidate (one more query).  The
    bound ``m`` grows by ``growth`` per failed round up to ``sqrt(N)``.  The last
    round's ``j`` is clipped to what the budget still allows.

    Returns ``(candidate or None, queries, iterations, verifications)``.
    """
    queries = iterations = verifications = 0
    m = 1.0
    cap = math.sqrt(N)
    while queries < budget:
        j = int(rng.integers(0, int(math.ceil(m))))
        j = min(j, budget - queries - 1)
        cand = sample_after(j)
        queries += j + 1
        iterations += j
        verifications += 1
        if verify(cand):
            return cand, queries, iterations, verifications
        m = min(growth * m, cap)
    return None, queries, iterations, verifications


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    p = np.clip(probs, 0, None)
    return int(rng.choice(p.size, p=p / p.sum()))


def diffuse(psi: np.ndarray) -> np.ndarray:
    """Reflection about the uniform superposition, ``2|u><u| - I``."""
    return 2 * psi.mean() - psi


def grover_state(diag: np.ndarray, iterations: int) -> np.ndarray:
    N = diag.size
    psi = np.full(N, 1 / math.sqrt(N), dtype=complex)
    for _ in range(iterations):
        psi = diffuse(diag * psi)
    return psi


def grover_fixed(oracle: OracleHandle, iterations: int) -> np.ndarray:
    """Amplitudes after ``iterations`` Grover iterations from the uniform state."""
    psi = np.full(oracle.layout.total_dim, 1 / math.sqrt(oracle.layout.total_dim), dtype=complex)
    for _ in range(iterations):
        psi = diffuse(oracle.apply_array(psi))
    return psi


def grover_success_probability(oracle: OracleHandle, iterations: int) -> float:
    psi = grover_fixed(oracle, iterations)
    marked = oracle.unitary.diagonal.real < 0
    return float(np.sum(np.abs(psi[marked]) ** 2))


def _finish(found, q, it, ver, M, success, **kw) -> SearchOutcome:
    return SearchOutcome(found=found, oracle_queries=q, interaction_steps=q * M, success=success,
                         iterations=it, verifications=ver, **kw)


def diagonal_search(diag: np.ndarray, verify, oracle: OracleHandle, rng, budget) -> tuple:
    N = diag.size
    cache: dict[int, np.ndarray] = {}

    def sample_after(j):
        if j not in cache:
            cache[j] = np.abs(grover_state(diag, j)) ** 2
        return _sample(cache[j], rng)

    found, q, it, ver = randomized_schedule(sample_after, verify, N, rng, budget)
    oracle.count(it)
    return found, q, it, ver


def grover_randomized(oracle: OracleHandle, N: int, rng: np.random.Generator, env=None,
                      budget: int | None = None) -> SearchOutcome:
    """Search a phase-flip oracle with an unknown number of marked items.

    Candidates are checked against ``env`` (total reward 1) when given,
    otherwise against the brute-force marked set recorded at construction.
    """
    diag = oracle.unitary.diagonal
    if diag is None or diag.size != N:
        raise ValueError("grover_randomized needs a diagonal phase-flip oracle over N sequences")
    if env is not None:
        verify = lambda a: env.total_reward(a) == 1  # noqa: E731
    else:
        marked = set(int(x) for x in oracle.info["marked"])
        verify = lambda a: a in marked  # noqa: E731
    budget = default_budget(N) if budget is None else int(budget)
    found, q, it, ver = diagonal_search(diag.real, verify, oracle, rng, budget)
    return _finish(found, q, it, ver, oracle.M, found is not None,
                   value=None if found is None else 1.0)


# ---------------------------------------------------------------- counting oracle searches


def threshold_phase_diagonal(counting: OracleHandle, threshold: int) -> tuple[np.ndarray, float]:
    """Phase kick-back through the counting oracle: U_Count, a comparator phase on
    count values >= threshold, U_Count again.  Returns the diagonal on the
    sequence register and the residual weight left in the count register."""
    if counting.info.get("include_percepts"):
        raise ValueError("use the reduced counting oracle for searches")
    N, D = counting.layout.dims
    comp = np.where(np.arange(D) >= threshold, -1.0, 1.0)
    coeff = np.exp(2j * np.pi * np.arange(N) / (N + 1)) / math.sqrt(N)
    psi = np.zeros((N, D), dtype=complex)
    psi[:, 0] = coeff
    op = counting.ops[0]
    psi = apply_unitary_array(psi.reshape(-1), counting.layout, op)
    psi = apply_unitary_array(psi, counting.layout, UnitaryOp((1,), diagonal=comp))
    psi = apply_unitary_array(psi, counting.layout, op).reshape(N, D)
    leak = float(np.sum(np.abs(psi[:, 1:]) ** 2))
    return (psi[:, 0] / coeff).real, leak


def amplitude_amplify_threshold(counting: OracleHandle, threshold: int, rng: np.random.Generator,
                                env=None, budget: int | None = None) -> SearchOutcome:
    """Find a sequence whose total reward is at least ``threshold``."""
    if threshold > counting.info["max_total"]:
        raise ValueError("threshold exceeds the largest representable total")
    N = counting.layout.dims[0]
    diag, leak = threshold_phase_diagonal(counting, threshold)
    if leak > DISENTANGLE_TOL:
        raise RuntimeError(f"count register did not disentangle (residual {leak:.3g})")
    totals = env.total_rewards() if env is not None else counting.info["totals"]
    verify = lambda a: int(totals[a]) >= threshold  # noqa: E731
    budget = default_budget(N) if budget is None else int(budget)
    found, q, it, ver = diagonal_search(diag, verify, counting, rng, budget)
    return _finish(found, q, it, ver, counting.M, found is not None,
                   value=None if found is None else float(totals[found]))


def find_max_reward(counting: OracleHandle, rng: np.random.Generator, env=None,
                    budget: int | None = None) -> SearchOutcome:
    """Raise the threshold one above the best reward seen until a search fails.

    The first candidate is a uniformly random sequence whose reward is read
    classically (one query).  Each threshold search may use at most
    ``10 sqrt(N)`` queries and the whole run ``50 sqrt(N)``.
    """
    N = counting.layout.dims[0]
    totals = env.total_rewards() if env is not None else counting.info["totals"]
    total_budget = default_budget(N, MAX_FIND_BUDGET_FACTOR) if budget is None else int(budget)
    best = int(rng.integers(N))
    q, it, ver = 1, 0, 1
    stages = 0
    while q < total_budget and totals[best] < counting.info["max_total"]:
        sub_budget = min(default_budget(N), total_budget - q)
        out = amplitude_amplify_threshold(counting, int(totals[best]) + 1, rng, env, sub_budget)
        q += out.oracle_queries
        it += out.iterations
        ver += out.verifications
        stages += 1
        if out.found is None:
            break
        best = out.found
    return _finish(best, q, it, ver, counting.M, True, value=float(totals[best]),
                   extra={"stages": stages})


# ---------------------------------------------------------------- phase estimation


def grover_iterate_block(oracle: OracleHandle, a: int) -> np.ndarray:
    """``G = A Z A^dagger Z`` on the reward qubit for sequence ``a``.

    For the rotation oracle this is a rotation by ``2 theta_a``, with
    eigenphases ``+-2 theta_a``.  Built from the reflection form too, since
    both share the first column.
    """
    A = oracle.unitary.blocks[a]
    Z = np.diag([1.0, -1.0])
    return A @ Z @ A.conj().T @ Z


def phase_estimation_state(oracle: OracleHandle, a: int, bits: int) -> np.ndarray:
    """Counter x reward-qubit state after phase estimation, before measurement.

    Shape ``(2**bits, 2)``.  The reward qubit starts in ``|0>``, an equal
    superposition of the two eigenvectors of ``G``.
    """
    if bits < 1:
        raise ValueError("need at least one bit")
    K = 2**bits
    if 2 * K * oracle.layout.dims[0] > DENSE_DIM_CAP:
        raise ResourceError(f"{bits}-bit phase estimation exceeds the dense cap")
    G = grover_iterate_block(oracle, a)
    amps = np.empty((K, 2), dtype=complex)
    v = np.array([1.0, 0.0], dtype=complex)
    for c in range(K):
        amps[c] = v
        v = G @ v
    amps /= math.sqrt(K)
    # inverse quantum Fourier transform on the counter
    return np.fft.fft(amps, axis=0, norm="ortho")


def grid_index(y: int, bits: int) -> int:
    return min(y, 2**bits - y)


def _sample_grid_index(oracle: OracleHandle, a: int, bits: int, rng: np.random.Generator) -> int:
    probs = np.sum(np.abs(phase_estimation_state(oracle, a, bits)) ** 2, axis=1)
    return grid_index(_sample(probs, rng), bits)


def phase_estimate_reward(oracle: OracleHandle, a: int, bits: int, rng: np.random.Generator,
                          env=None) -> EstimateOutcome:
    """Estimate ``|theta_a|`` to ``bits`` bits; costs ``2**bits - 1`` controlled
    applications of the iterate, each counted as one oracle query."""
    k = _sample_grid_index(oracle, a, bits, rng)
    cost = 2**bits - 1
    oracle.count(cost)
    return EstimateOutcome(sequence=int(a), theta_estimate=math.pi * k / 2**bits, bits=bits,
                           grid_index=k, oracle_queries=cost, interaction_steps=cost * oracle.M)


def estimate_distribution(oracle: OracleHandle, a: int, bits: int) -> np.ndarray:
    """Probability of each grid index ``0..2**(bits-1)``."""
    probs = np.sum(np.abs(phase_estimation_state(oracle, a, bits)) ** 2, axis=1)
    out = np.zeros(2 ** (bits - 1) + 1)
    for y, p in enumerate(probs):
        out[grid_index(y, bits)] += p
    return out


def default_bits(p_min: float) -> int:
    if not 0 < p_min <= 1:
        raise ValueError("p_min must lie in (0, 1]")
    return math.ceil(math.log2(math.pi / math.asin(math.sqrt(p_min)))) + 2


def threshold_grid(p_min: float, bits: int) -> tuple[float, int]:
    """Real-valued grid position of ``arcsin sqrt(p_min)`` and the smallest
    grid index that counts as above threshold."""
    t = math.asin(math.sqrt(p_min)) * 2**bits / math.pi
    return t, int(math.ceil(t - 1e-12))


def amplify_above_pmin(oracle: OracleHandle, p_min: float, rng: np.random.Generator,
                       bits: int | None = None, env: StochasticEpochalEnv | None = None,
                       budget: int | None = None, audit_samples: int = 400, audit_z: float = 3.0) -> SearchOutcome:
    """Amplify sequences whose reward probability is at least ``p_min``.

    The marking operator is phase estimation, a comparator phase on grid
    indices at or above the threshold, and uncomputation.  Conjugating by the
    phase-estimation circuit turns this into amplitude amplification of the
    prepared state ``sum_a |a>|Phi_a>`` with the comparator as oracle, which is
    what is simulated.  One amplification query is one marking operator, i.e.
    ``2**bits - 1`` oracle uses of ``M`` steps each.

    Each round measures the sequence together with its estimate register; the
    preparation of that state is the one query a round costs beyond its
    iterations.  A candidate whose measured estimate clears the threshold is
    then audited on the classical environment: its empirical reward frequency
    over ``audit_samples`` epochs must reach ``p_min`` minus ``audit_z``
    standard errors.  Audit epochs are reported separately.
    """
    N = oracle.layout.dims[0]
    bits = default_bits(p_min) if bits is None else int(bits)
    K = 2**bits
    if N * K * 2 > DENSE_DIM_CAP:
        raise ResourceError("phase-estimation register exceeds the dense cap")
    t_real, k_min = threshold_grid(p_min, bits)
    phi = np.stack([phase_estimation_state(oracle, a, bits) for a in range(N)]) / math.sqrt(N)
    good = np.array([grid_index(y, bits) >= k_min for y in range(K)])
    flip = np.where(good, -1.0, 1.0)[None, :, None]
    p_good = np.array([np.sum(np.abs(phi[a][good]) ** 2) * N for a in range(N)])
    ancilla_overlap = float(np.min(np.abs(1 - 2 * p_good)))
    flat_phi = phi.reshape(-1)

    def sample_after(j):
        psi = flat_phi.copy()
        for _ in range(j):
            psi = (flip * psi.reshape(phi.shape)).reshape(-1)
            psi = 2 * flat_phi * np.vdot(flat_phi, psi) - psi
        # joint measurement of the sequence and the estimate register
        probs = np.sum(np.abs(psi.reshape(N, K, 2)) ** 2, axis=2)
        return _sample(probs.reshape(-1), rng)

    warnings: list[str] = []
    audits = {"epochs": 0}
    per_query = K - 1

    def verify(flat):
        a, y = divmod(flat, K)
        k = grid_index(y, bits)
        if abs(k - t_real) < 1:
            msg = f"estimate for sequence {a} lies within one grid cell of the threshold"
            if msg not in warnings:
                warnings.append(msg)
        if k < k_min:
            return False
        if env is None or audit_samples <= 0:
            return True
        rewards = rng.random(audit_samples) < env.reward_prob[a]
        audits["epochs"] += audit_samples
        se = math.sqrt(max(p_min * (1 - p_min), 1e-12) / audit_samples)
        return rewards.mean() >= p_min - audit_z * se

    budget = default_budget(N) if budget is None else int(budget)
    flat, q, it, ver = randomized_schedule(sample_after, verify, N, rng, budget)
    found = None if flat is None else flat // K
    oracle.count(q * per_query)
    value = None
    if found is not None and env is not None:
        value = float(env.reward_prob[found])
    return SearchOutcome(found=found, oracle_queries=q, interaction_steps=q * per_query * oracle.M,
                         success=found is not None, iterations=it, verifications=ver, value=value,
                         extra={"bits": bits, "threshold_index": k_min, "audit_samples": audits["epochs"],
                                "ancilla_return_overlap": ancilla_overlap, "oracle_uses": q * per_query},
                         warnings=warnings)


# ---------------------------------------------------------------- structural dependence


def exact_schedule(gamma: float) -> tuple[int, float]:
    """Iteration count and dilution amplitude that make amplification exact.

    ``k = ceil(pi / (4 theta) - 1/2)`` with ``sin theta = gamma``; an ancilla
    with amplitude ``sin(theta') / sin(theta)`` lowers the angle to
    ``theta' = pi / (2 (2k + 1))`` so that ``k`` iterations land on the target.
    """
    theta = math.asin(gamma)
    k = max(0, math.ceil(math.pi / (4 * theta) - 0.5))
    theta_p = math.pi / (2 * (2 * k + 1))
    return k, min(1.0, math.sin(theta_p) / math.sin(theta))


def sample_rewarding_pair(purified: OracleHandle, rng: np.random.Generator, schedule: str = "exact",
                          budget: int | None = None):
    """Amplify ``|pi> = S_E (uniform over a)|0,0,0>`` towards its rewarded part.

    Each iteration applies the reward-register flip and then the reflection
    about ``|pi>`` realized as ``S_E U_a (2|0><0| - I) U_a^dagger S_E^dagger``;
    ``S_E`` is not self-inverse so the second use is its inverse.  Returns
    ``(a, s, outcome)`` where ``outcome.oracle_queries`` counts amplification
    iterations and ``outcome.extra['oracle_calls']`` every use of ``S_E``.
    """
    gamma = purified.info["gamma"]
    if gamma <= 0:
        raise NoRewardingPairError("no action sequence is ever rewarded")
    N, S, _, L = purified.layout.dims
    layout = RegisterLayout((N, S, S, L, 2))
    calls = {"n": 0}

    def se(psi, inverse=False):
        calls["n"] += 1
        ops = reversed(purified.ops) if inverse else purified.ops
        for op in ops:
            psi = apply_unitary_array(psi, layout, op.dagger() if inverse else op)
        return psi

    def prepare(b):
        psi = np.zeros(layout.total_dim, dtype=complex)
        v = psi.reshape(N, S * S * L, 2)
        v[:, 0, 0] = math.sqrt(1 - b * b) / math.sqrt(N)
        v[:, 0, 1] = b / math.sqrt(N)
        return se(psi)

    def make_flip(diluted):
        f = np.ones((N, S, S, L, 2))
        f[:, :, :, 1:, 1 if diluted else slice(None)] = -1
        return f.reshape(-1)

    def reflect_about_prep(psi, b):
        # S_E U (2|0><0| - I) U^dagger S_E^dagger with U the uniform-and-ancilla preparation
        psi = se(psi, inverse=True)
        v = psi.reshape(N, S * S * L, 2)
        u = np.zeros((N, S * S * L, 2), dtype=complex)
        u[:, 0, 0] = math.sqrt(1 - b * b) / math.sqrt(N)
        u[:, 0, 1] = b / math.sqrt(N)
        overlap = np.vdot(u.reshape(-1), v.reshape(-1))
        psi = 2 * overlap * u.reshape(-1) - psi
        return se(psi)

    def run(j, b, diluted):
        flip = make_flip(diluted)
        psi = prepare(b)
        for _ in range(j):
            psi = reflect_about_prep(flip * psi, b)
        return psi

    def measure(psi):
        idx = _sample(np.abs(psi) ** 2, rng)
        a, s, s2, lam, anc = np.unravel_index(idx, layout.dims)
        return int(a), int(s), int(lam)

    pair_rewards = purified.info["pair_rewards"]
    if schedule == "exact":
        k, b = exact_schedule(gamma)
        psi = run(k, b, diluted=True)
        a, s, lam = measure(psi)
        iterations = k
        success = lam > 0 and pair_rewards[s, a] > 0
        rounds = 1
    elif schedule == "randomized":
        cap = (S * N)
        budget = default_budget(cap) if budget is None else int(budget)
        result = {}

        def sample_after(j):
            psi = run(j, 1.0, diluted=False)
            result["pair"] = measure(psi)
            return 0

        def verify(_):
            a, s, lam = result["pair"]
            return lam > 0

        found, q, iterations, rounds = randomized_schedule(sample_after, verify, cap, rng, budget)
        a, s, lam = result["pair"]
        success = found is not None and pair_rewards[s, a] > 0
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    purified.count(calls["n"])
    outcome = SearchOutcome(found=a if success else None, oracle_queries=iterations,
                            interaction_steps=iterations * purified.M, success=bool(success),
                            iterations=iterations, verifications=rounds,
                            extra={"oracle_calls": calls["n"], "gamma": gamma, "schedule": schedule,
                                   "percepts": s, "reward": lam})
    return a, s, outcome
