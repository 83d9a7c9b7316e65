"""The quantum-enhanced agent built around a classical learning model.

Four phases, always in this order:

1. exploration: randomized Grover search on the phase-flip oracle with a fixed
   budget of ``floor(k sqrt(N))`` queries (``M`` interaction steps each);
2. replay: one classical epoch with the found sequence to collect percepts;
3. training: the inner model is simulated on the replayed epoch, restarting on
   any deviation, until it has produced ``1 + floor(k sqrt(N))`` consecutive
   winning epochs.  No interaction steps are spent;
4. handover: the trained simulation talks to the classical environment.

While the tester is untested (the first ``t_prep`` steps) only phases 1 and 2
touch the environment; evaluation starts at ``t_prep`` for both arms.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .agent_env import (
    Agent,
    EpochalDeterministicEnv,
    History,
    InfeasibleHistoryError,
    MeritFunction,
    RewardedPercept,
    ValidationError,
    interact_epochs,
    rate,
    replay_conditioned,
    sequence_digits,
)
from .constants import RESTART_CAP
from .oracles import OracleHandle, build_phase_flip_oracle
from .search import SearchOutcome, diagonal_search

PHASES = ("exploration", "replay", "training", "handover")

CSV_FIELDS = ("n", "M", "k", "epsilon", "T_eval", "steps_q", "steps_c", "rate_q", "rate_c", "gap",
              "failure_flag")


class TrainingInfeasibleError(RuntimeError):
    """The inner model did not reproduce the winning history within the restart cap."""


def exploration_budget(N: int, k: float) -> int:
    return int(math.floor(k * math.sqrt(N)))


def prep_steps(N: int, M: int, k: float) -> int:
    """Length of the untested period: ``floor(k sqrt(N)) * M + M``."""
    return exploration_budget(N, k) * M + M


def seen_winner_bound(N: int, epochs: int) -> float:
    """Upper bound on the chance that a classical explorer met the single winner
    within ``epochs`` epochs, never repeating a failed sequence."""
    p_miss = 1.0
    for j in range(min(epochs, N)):
        p_miss *= 1 - 1 / (N - j)
    return 1 - p_miss


def seen_winner_simplified(N: int, k: float) -> float:
    return k / math.sqrt(N) + 1 / N


def quantum_exploration(oracle: OracleHandle, k: float, rng: np.random.Generator,
                        env: EpochalDeterministicEnv | None = None) -> SearchOutcome:
    """Randomized Grover search capped at ``floor(k sqrt(N))`` oracle queries.

    Under the single-win promise a sequence is also accepted without a query
    once every other sequence has failed verification (this only matters for
    ``N = 2``).
    """
    N = oracle.layout.dims[0]
    diag = oracle.unitary.diagonal
    if diag is None or diag.size != N:
        raise ValidationError("exploration needs a diagonal phase-flip oracle")
    marked = {int(x) for x in oracle.info["marked"]}
    rejected: set[int] = set()
    deduced = False

    def verify(a: int) -> bool:
        nonlocal deduced
        if env is not None and env.total_reward(a) == 1 or env is None and a in marked:
            return True
        rejected.add(a)
        deduced = len(rejected) == N - 1
        return deduced

    found, q, it, ver = diagonal_search(diag.real, verify, oracle, rng, max(1, exploration_budget(N, k)))
    if deduced:
        found = next(a for a in range(N) if a not in rejected)
    return SearchOutcome(found=found, oracle_queries=q, interaction_steps=q * oracle.M,
                         success=found is not None, iterations=it, verifications=ver,
                         value=None if found is None else 1.0, extra={"deduced": deduced})


def replay_epoch(env: EpochalDeterministicEnv, sequence: int, rng: np.random.Generator | None = None) -> History:
    """One classical epoch with ``sequence``; returns ``(s_1, a_1, ..., a_M, s_{M+1})``."""
    if env.buffer:
        raise ValidationError("replay must start at an epoch boundary")
    h = History(env.M)
    for a in sequence_digits(int(sequence), env.n, env.M):
        h.append(a, env.step(a, rng))
    return h


class _TapeEnv:
    """Plays back the percepts of a fixed history in order."""

    def __init__(self, h: History):
        self._percepts = h.percepts[1:]
        self._i = 0
        self.M = h.epoch_length

    def step(self, action: int, rng=None) -> RewardedPercept:
        p = self._percepts[self._i]
        self._i += 1
        return p


def train_simulation(inner_factory: Callable[[], Agent], h_win: History, repetitions: int,
                     rng: np.random.Generator, restart_cap: int = RESTART_CAP) -> tuple[Agent, History, int]:
    """Post-select simulated runs of the inner model onto ``repetitions`` copies of ``h_win``.

    Returns ``(trained agent, h_tot, restarts)``.  The percepts come from the
    replayed epoch, so no real interaction is spent.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be at least 1")
    h_tot = History(h_win.epoch_length)
    for _ in range(repetitions):
        h_tot = h_tot.concat(h_win)
    try:
        agent, _, restarts = replay_conditioned(inner_factory, lambda: _TapeEnv(h_tot), h_tot, rng, restart_cap)
    except InfeasibleHistoryError as exc:
        raise TrainingInfeasibleError(str(exc)) from exc
    return agent, h_tot, restarts


@dataclass
class QuantumEnhancedAgent:
    """State of one quantum-enhanced run; ``phase`` only moves forward."""

    inner_factory: Callable[[], Agent]
    k: float
    restart_cap: int = RESTART_CAP
    phase: str = "exploration"
    found: int | None = None
    h_win: History | None = None
    trained: Agent | None = None
    oracle_queries: int = 0
    interaction_steps: int = 0
    restarts: int = 0
    failed: bool = False
    phases_seen: list[str] = field(default_factory=list)

    def _enter(self, phase: str) -> None:
        if self.phases_seen and PHASES.index(phase) <= PHASES.index(self.phases_seen[-1]):
            raise RuntimeError(f"phase {phase!r} cannot follow {self.phases_seen[-1]!r}")
        self.phase = phase
        self.phases_seen.append(phase)

    def prepare(self, env: EpochalDeterministicEnv, oracle: OracleHandle, rng: np.random.Generator) -> None:
        """Run phases 1 to 3; on a failed search fall back to the untrained model."""
        self._enter("exploration")
        out = quantum_exploration(oracle, self.k, rng, env)
        self.oracle_queries = out.oracle_queries
        self.interaction_steps = out.interaction_steps
        if out.found is None:
            self.failed = True
            self.trained = self.inner_factory()
            self._enter("handover")
            return
        self.found = int(out.found)
        self._enter("replay")
        self.h_win = replay_epoch(env, self.found, rng)
        self.interaction_steps += env.M
        self._enter("training")
        reps = 1 + exploration_budget(env.n**env.M, self.k)
        self.trained, _, self.restarts = train_simulation(self.inner_factory, self.h_win, reps, rng,
                                                          self.restart_cap)
        self._enter("handover")


@dataclass
class ComparisonReport:
    n: int
    M: int
    k: float
    epsilon: float | None
    T_eval: int
    t_prep: int
    steps_q: int
    steps_c: int
    oracle_queries: int
    rate_q: float
    rate_c: float
    gap: float | None
    failure_flag: bool
    restarts: int
    seen_winner_c: bool
    phases: list[str]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> dict:
        d = self.to_dict()
        row = {k: d[k] for k in CSV_FIELDS}
        row["gap"] = "" if self.gap is None else self.gap
        row["failure_flag"] = int(self.failure_flag)
        return row

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(self.csv_row())
        return buf.getvalue()


def _epoch_count(steps: int, M: int) -> int:
    if steps % M:
        raise ValidationError(f"step count {steps} is not a whole number of epochs of length {M}")
    return steps // M


def run_quantum_enhanced(inner_factory: Callable[[], Agent], env: EpochalDeterministicEnv, k: float,
                         T_eval: int | None, rng: np.random.Generator,
                         restart_cap: int = RESTART_CAP, oracle: OracleHandle | None = None) -> ComparisonReport:
    """Run both arms on fresh copies of ``env`` and compare Rates after ``t_prep`` steps.

    The baseline interacts classically for ``t_prep`` steps; the enhanced agent
    spends ``queries * M + M`` of them on search and replay and is idle for the
    remainder of the untested period.  Both are then evaluated for ``T_eval``.
    """
    if not isinstance(env, EpochalDeterministicEnv) or not env.is_single_win:
        raise ValidationError("the enhanced agent needs a single-win deterministic epochal environment")
    n, M = env.n, env.M
    N = n**M
    t_prep = prep_steps(N, M, k)
    if T_eval is None:
        T_eval = exploration_budget(N, k) * M
    eval_epochs = _epoch_count(int(T_eval), M)
    rng_q, rng_c = rng.spawn(2)
    oracle = build_phase_flip_oracle(env) if oracle is None else oracle

    env_q = env.fresh()
    aq = QuantumEnhancedAgent(inner_factory, k, restart_cap)
    aq.prepare(env_q, oracle, rng_q)
    agent_q = aq.trained
    if aq.failed:
        # fall back to the plain model for what is left of the untested period
        interact_epochs(agent_q, env_q, _epoch_count(t_prep - aq.interaction_steps, M), rng_q)
    h_q = interact_epochs(agent_q, env_q, eval_epochs, rng_q)

    env_c = env.fresh()
    agent_c = inner_factory()
    h_prep = interact_epochs(agent_c, env_c, _epoch_count(t_prep, M), rng_c)
    h_c = interact_epochs(agent_c, env_c, eval_epochs, rng_c)

    merit = MeritFunction()
    rq, rc = rate(h_q, merit), rate(h_c, merit)
    return ComparisonReport(
        n=n, M=M, k=k, epsilon=getattr(agent_c, "epsilon", None), T_eval=int(T_eval), t_prep=t_prep,
        steps_q=aq.interaction_steps, steps_c=t_prep, oracle_queries=aq.oracle_queries,
        rate_q=rq, rate_c=rc, gap=(rq / rc if rc > 0 else None), failure_flag=aq.failed,
        restarts=aq.restarts, seen_winner_c=bool(h_prep.rewards().any()), phases=list(aq.phases_seen),
    )


def handover_copy(agent: Agent) -> Agent:
    """Independent copy of a trained model, for side-by-side behavioural checks."""
    return copy.deepcopy(agent)

