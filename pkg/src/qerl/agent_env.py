"""Classical agent-environment interaction for strictly epochal tasks.

Conventions used throughout the package:

* Action codes are integers ``0..n-1``; the alphabet keeps the empty symbol at
  index 0, so code ``c`` names ``alphabet.actions[c + 1]``.
* Percepts are alphabet indices, with ``0`` the empty percept.
* An M-step action sequence is identified by its flat index, first action most
  significant (base-n digits).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .constants import DENSE_DIM_CAP, DISTRIBUTION_TOL, RESTART_CAP

EMPTY = "ε"


class ValidationError(ValueError):
    """An environment table, fixture or history breaks its declared promise."""


class InfeasibleHistoryError(RuntimeError):
    """Replay with post-selection never reproduced the requested history."""


@dataclass(frozen=True)
class Alphabet:
    actions: tuple[str, ...]
    percepts: tuple[str, ...]

    def __post_init__(self):
        for name, syms in (("actions", self.actions), ("percepts", self.percepts)):
            syms = tuple(syms)
            if len(set(syms)) != len(syms):
                raise ValidationError(f"{name} symbols are not unique")
            if not syms or syms[0] != EMPTY:
                raise ValidationError(f"{name} must start with the empty symbol")
            object.__setattr__(self, name, syms)
        if self.n < 2:
            raise ValidationError("need at least two actions")

    @classmethod
    def indexed(cls, n_actions: int, n_percepts: int = 1) -> "Alphabet":
        return cls((EMPTY,) + tuple(f"a{i}" for i in range(n_actions)),
                   (EMPTY,) + tuple(f"s{i}" for i in range(n_percepts)))

    @property
    def n(self) -> int:
        """Number of proper (non-empty) actions."""
        return len(self.actions) - 1

    @property
    def num_percepts(self) -> int:
        """Number of percept symbols including the empty one."""
        return len(self.percepts)


@dataclass(frozen=True)
class RewardedPercept:
    percept: int
    reward: int = 0


EMPTY_PERCEPT = RewardedPercept(0, 0)


def sequence_index(actions: Sequence[int], n: int) -> int:
    idx = 0
    for a in actions:
        idx = idx * n + int(a)
    return idx


def sequence_digits(index: int, n: int, M: int) -> tuple[int, ...]:
    out = []
    for _ in range(M):
        index, r = divmod(int(index), n)
        out.append(r)
    return tuple(reversed(out))


@dataclass
class History:
    """Alternating percept/action record.

    ``percepts[0]`` is the empty percept; ``percepts[i+1]`` is the response to
    ``actions[i]``.  The number of steps is ``len(actions)``.
    """

    epoch_length: int
    percepts: list[RewardedPercept] = field(default_factory=lambda: [EMPTY_PERCEPT])
    actions: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.percepts or self.percepts[0] != EMPTY_PERCEPT:
            raise ValidationError("history must start with the empty percept")
        if len(self.percepts) != len(self.actions) + 1:
            raise ValidationError("percepts and actions do not alternate")

    @property
    def steps(self) -> int:
        return len(self.actions)

    def __len__(self) -> int:
        return len(self.actions)

    def append(self, action: int, response: RewardedPercept) -> None:
        self.actions.append(int(action))
        self.percepts.append(response)

    def rewards(self) -> np.ndarray:
        return np.array([p.reward for p in self.percepts[1:]], dtype=np.int64)

    def epoch_rewards(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Total reward of each completed epoch lying inside steps ``[start, stop)``."""
        M = self.epoch_length
        stop = self.steps if stop is None else min(stop, self.steps)
        first = -(-start // M)
        last = stop // M
        r = self.rewards()
        if last <= first:
            return np.zeros(0, dtype=np.int64)
        return r[first * M:last * M].reshape(-1, M).sum(axis=1)

    def epoch_sequences(self) -> list[tuple[int, ...]]:
        M = self.epoch_length
        return [tuple(self.actions[e * M:(e + 1) * M]) for e in range(self.steps // M)]

    def concat(self, other: "History") -> "History":
        if other.epoch_length != self.epoch_length:
            raise ValidationError("cannot concatenate histories with different epoch lengths")
        return History(self.epoch_length, self.percepts + other.percepts[1:], self.actions + other.actions)

    def to_records(self, alphabet: Alphabet | None = None) -> list[dict]:
        recs = []
        for i, p in enumerate(self.percepts):
            act = self.actions[i] if i < len(self.actions) else None
            if alphabet is None:
                recs.append({"percept": p.percept, "reward": p.reward, "action": act})
            else:
                recs.append({"percept": alphabet.percepts[p.percept], "reward": p.reward,
                             "action": None if act is None else alphabet.actions[act + 1]})
        return recs

    @classmethod
    def from_records(cls, records: list[dict], epoch_length: int, alphabet: Alphabet | None = None) -> "History":
        if not records:
            raise ValidationError("empty history record list")
        percepts, actions = [], []
        for i, rec in enumerate(records):
            p, a = rec["percept"], rec.get("action")
            if alphabet is not None:
                p = alphabet.percepts.index(p)
                a = None if a is None else alphabet.actions.index(a) - 1
            percepts.append(RewardedPercept(int(p), int(rec.get("reward", 0))))
            if a is None:
                if i != len(records) - 1:
                    raise ValidationError("only the last record may lack an action")
            else:
                actions.append(int(a))
        if len(actions) == len(percepts):
            raise ValidationError("history must end with a percept")
        return cls(epoch_length, percepts, actions)

    def to_json(self, alphabet: Alphabet | None = None) -> str:
        return json.dumps(self.to_records(alphabet), ensure_ascii=False)


# ---------------------------------------------------------------- environments


class EpochalDeterministicEnv:
    """Deterministic strictly epochal environment given by full-sequence tables.

    ``percept_table[a, i]`` is the percept returned after the ``i``-th action of
    sequence ``a`` and ``reward_table[a, i]`` its reward.  Responses may only
    depend on the prefix of actions seen so far; this is checked on construction.
    """

    def __init__(self, alphabet: Alphabet, M: int, percept_table, reward_table, lambda_max: int | None = None):
        if M < 1:
            raise ValidationError("epoch length must be >= 1")
        self.alphabet = alphabet
        self.M = int(M)
        self.n = alphabet.n
        self.N = self.n**self.M
        if self.N > DENSE_DIM_CAP:
            raise ValidationError(f"n^M = {self.N} exceeds the dense cap")
        pt = np.asarray(percept_table, dtype=np.int64).reshape(self.N, self.M)
        rt = np.asarray(reward_table, dtype=np.int64)
        if rt.ndim == 1:
            # terminal rewards only
            full = np.zeros((self.N, self.M), dtype=np.int64)
            full[:, -1] = rt
            rt = full
        rt = rt.reshape(self.N, self.M)
        if pt.min(initial=0) < 0 or pt.max(initial=0) >= alphabet.num_percepts:
            raise ValidationError("percept table uses symbols outside the alphabet")
        if rt.min(initial=0) < 0:
            raise ValidationError("rewards must be non-negative")
        self.lambda_max = int(rt.max(initial=0)) if lambda_max is None else int(lambda_max)
        if rt.max(initial=0) > self.lambda_max:
            raise ValidationError("reward exceeds declared lambda_max")
        for i in range(self.M):
            # responses to step i may depend only on the first i+1 actions
            block = self.n ** (self.M - i - 1)
            for tab in (pt, rt):
                col = tab[:, i].reshape(-1, block)
                if np.any(col != col[:, :1]):
                    raise ValidationError("environment response depends on future actions")
        pt.setflags(write=False)
        rt.setflags(write=False)
        self.percept_table = pt
        self.reward_table = rt
        self._buffer: list[int] = []

    @classmethod
    def single_win(cls, n: int, M: int, winner: Sequence[int] | int, percept_table=None,
                   alphabet: Alphabet | None = None) -> "EpochalDeterministicEnv":
        N = n**M
        w = winner if isinstance(winner, (int, np.integer)) else sequence_index(winner, n)
        if not 0 <= w < N:
            raise ValidationError("winner index out of range")
        rewards = np.zeros(N, dtype=np.int64)
        rewards[w] = 1
        if percept_table is None:
            percept_table = np.zeros((N, M), dtype=np.int64)
        pt = np.asarray(percept_table)
        if alphabet is None:
            alphabet = Alphabet.indexed(n, max(1, int(pt.max(initial=0))))
        return cls(alphabet, M, pt, rewards, lambda_max=1)

    @classmethod
    def from_functions(cls, alphabet: Alphabet, M: int, percept_fn: Callable[[tuple], int],
                       reward_fn: Callable[[tuple], int], lambda_max: int | None = None) -> "EpochalDeterministicEnv":
        """Tabulate ``percept_fn(prefix)`` and ``reward_fn(prefix)`` over all prefixes."""
        n = alphabet.n
        N = n**M
        pt = np.zeros((N, M), dtype=np.int64)
        rt = np.zeros((N, M), dtype=np.int64)
        for a in range(N):
            seq = sequence_digits(a, n, M)
            for i in range(M):
                pt[a, i] = percept_fn(seq[:i + 1])
                rt[a, i] = reward_fn(seq[:i + 1])
        return cls(alphabet, M, pt, rt, lambda_max)

    # classical interaction

    def reset(self) -> None:
        self._buffer = []

    @property
    def buffer(self) -> tuple[int, ...]:
        return tuple(self._buffer)

    def step(self, action: int, rng: np.random.Generator | None = None) -> RewardedPercept:
        if not 0 <= action < self.n:
            raise ValidationError(f"action {action} outside the alphabet")
        self._buffer.append(int(action))
        i = len(self._buffer) - 1
        row = sequence_index(self._buffer, self.n) * self.n ** (self.M - i - 1)
        out = RewardedPercept(int(self.percept_table[row, i]), int(self.reward_table[row, i]))
        if len(self._buffer) == self.M:
            self._buffer = []
        return out

    def respond_epoch(self, seq_index: int, rng: np.random.Generator | None = None) -> list[RewardedPercept]:
        if self._buffer:
            raise ValidationError("epoch-level response requires an epoch boundary")
        return [RewardedPercept(int(p), int(r))
                for p, r in zip(self.percept_table[seq_index], self.reward_table[seq_index])]

    def fresh(self) -> "EpochalDeterministicEnv":
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out._buffer = []
        return out

    # brute-force views

    def total_rewards(self) -> np.ndarray:
        return self.reward_table.sum(axis=1)

    def total_reward(self, seq: int | Sequence[int]) -> int:
        idx = seq if isinstance(seq, (int, np.integer)) else sequence_index(seq, self.n)
        return int(self.reward_table[idx].sum())

    def winners(self) -> np.ndarray:
        return np.flatnonzero(self.total_rewards() > 0)

    @property
    def is_single_win(self) -> bool:
        tot = self.total_rewards()
        return self.lambda_max == 1 and int((tot > 0).sum()) == 1 and int(tot.max()) == 1

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"n": self.n, "M": self.M, "lambda_max": self.lambda_max}).encode())
        h.update(self.percept_table.tobytes())
        h.update(self.reward_table.tobytes())
        return h.hexdigest()[:16]


class StochasticEpochalEnv:
    """Stochastic strictly epochal environment.

    Two forms are supported.  With only ``reward_prob`` (length ``n^M``) every
    epoch returns empty percepts and a terminal reward of 1 with probability
    ``reward_prob[a]``.  With ``percept_probs`` (a distribution over percept
    sequences, independent of the actions) and ``reward_table[s, a]`` the
    percept sequence is drawn at the start of the epoch, percept ``s_i`` is
    returned with the response to action ``i``, and the terminal reward is
    ``reward_table[s, a]``.
    """

    def __init__(self, alphabet: Alphabet, M: int, reward_prob=None, percept_probs=None, reward_table=None):
        self.alphabet = alphabet
        self.M = int(M)
        self.n = alphabet.n
        self.N = self.n**self.M
        if self.N > DENSE_DIM_CAP:
            raise ValidationError(f"n^M = {self.N} exceeds the dense cap")
        self.num_percept_symbols = alphabet.num_percepts - 1
        if percept_probs is not None:
            pp = np.asarray(percept_probs, dtype=float).reshape(-1)
            S = self.num_percept_symbols**self.M
            if pp.size != S:
                raise ValidationError(f"percept distribution needs {S} entries")
            if pp.min() < 0 or abs(pp.sum() - 1) > DISTRIBUTION_TOL:
                raise ValidationError("percept distribution is not normalized")
            rt = np.asarray(reward_table, dtype=np.int64).reshape(S, self.N)
            if rt.min() < 0:
                raise ValidationError("rewards must be non-negative")
            pp.setflags(write=False)
            rt.setflags(write=False)
            self.percept_probs = pp
            self.pair_rewards = rt
            rp = pp @ (rt > 0).astype(float)
        else:
            if reward_prob is None:
                raise ValidationError("give reward_prob or percept_probs with reward_table")
            self.percept_probs = None
            self.pair_rewards = None
            rp = np.asarray(reward_prob, dtype=float).reshape(-1)
            if rp.size != self.N:
                raise ValidationError(f"reward_prob needs {self.N} entries")
        if np.any(rp < -DISTRIBUTION_TOL) or np.any(rp > 1 + DISTRIBUTION_TOL):
            raise ValidationError("reward probabilities must lie in [0, 1]")
        rp = np.clip(rp, 0.0, 1.0)
        rp.setflags(write=False)
        self.reward_prob = rp
        self.lambda_max = 1 if self.pair_rewards is None else int(max(1, self.pair_rewards.max()))
        self._buffer: list[int] = []
        self._percepts: tuple[int, ...] = ()

    @classmethod
    def invasion_game(cls, n: int, M: int, correct: Sequence[int] | None = None) -> "StochasticEpochalEnv":
        """Uniformly random percepts; percept ``s`` has exactly one correct action
        ``correct[s]``; the epoch is rewarded iff every action was correct."""
        correct = list(range(n)) if correct is None else [int(c) for c in correct]
        k = len(correct)
        S = k**M
        rt = np.zeros((S, n**M), dtype=np.int64)
        for s in range(S):
            target = [correct[x] for x in sequence_digits(s, k, M)]
            rt[s, sequence_index(target, n)] = 1
        return cls(Alphabet.indexed(n, k), M, percept_probs=np.full(S, 1 / S), reward_table=rt)

    @property
    def theta(self) -> np.ndarray:
        return np.arcsin(np.sqrt(self.reward_prob))

    def reset(self) -> None:
        self._buffer = []

    def _draw_percepts(self, rng) -> tuple[int, ...]:
        if self.percept_probs is None:
            return (0,) * self.M
        s = int(rng.choice(self.percept_probs.size, p=self.percept_probs))
        return tuple(x + 1 for x in sequence_digits(s, self.num_percept_symbols, self.M))

    def _terminal_reward(self, seq: int, percepts: tuple[int, ...], rng) -> int:
        if self.pair_rewards is None:
            return int(rng.random() < self.reward_prob[seq])
        s = sequence_index([p - 1 for p in percepts], self.num_percept_symbols)
        return int(self.pair_rewards[s, seq])

    def step(self, action: int, rng: np.random.Generator) -> RewardedPercept:
        if not 0 <= action < self.n:
            raise ValidationError(f"action {action} outside the alphabet")
        if not self._buffer:
            self._percepts = self._draw_percepts(rng)
        self._buffer.append(int(action))
        i = len(self._buffer) - 1
        reward = 0
        if len(self._buffer) == self.M:
            reward = self._terminal_reward(sequence_index(self._buffer, self.n), self._percepts, rng)
            self._buffer = []
        return RewardedPercept(self._percepts[i], reward)

    def respond_epoch(self, seq_index: int, rng: np.random.Generator) -> list[RewardedPercept]:
        if self._buffer:
            raise ValidationError("epoch-level response requires an epoch boundary")
        percepts = self._draw_percepts(rng)
        reward = self._terminal_reward(seq_index, percepts, rng)
        return [RewardedPercept(p, reward if i == self.M - 1 else 0) for i, p in enumerate(percepts)]

    def fresh(self) -> "StochasticEpochalEnv":
        out = object.__new__(type(self))
        out.__dict__.update(self.__dict__)
        out._buffer = []
        out._percepts = ()
        return out

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"n": self.n, "M": self.M}).encode())
        h.update(self.reward_prob.tobytes())
        if self.percept_probs is not None:
            h.update(self.percept_probs.tobytes())
            h.update(self.pair_rewards.tobytes())
        return h.hexdigest()[:16]


def env_step(env, action: int, rng: np.random.Generator | None = None) -> RewardedPercept:
    return env.step(action, rng)


# ---------------------------------------------------------------- agents


class Agent:
    """Interface for classical learning models.

    ``act`` receives the latest rewarded percept and returns an action code;
    ``learn`` is invoked on every rewarded percept.  Agents that choose a whole
    epoch at its start may also implement ``plan_epoch``/``observe_epoch`` so the
    epoch-level driver can skip the per-step loop.  Both paths must draw from
    the rng identically.
    """

    epoch_planning = False

    def reset(self) -> None:
        raise NotImplementedError

    def act(self, percept: RewardedPercept, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def learn(self, percept: RewardedPercept) -> None:
        pass


class EpsilonGreedyAgent(Agent):
    """Stores the first rewarded sequence; afterwards replays it with probability
    ``epsilon`` and otherwise explores.  Exploration is uniform over sequences not
    tried yet (without replacement), falling back to uniform once all are tried."""

    epoch_planning = True

    def __init__(self, n: int, M: int, epsilon: float = 1.0):
        if not 0.0 <= epsilon <= 1.0:
            raise ValidationError("epsilon must lie in [0, 1]")
        self.n = int(n)
        self.M = int(M)
        self.N = self.n**self.M
        self.epsilon = float(epsilon)
        self.reset()

    def reset(self) -> None:
        self.winner: int | None = None
        self._pool: np.ndarray | None = None
        self._pool_size = self.N
        self._plan: tuple[int, ...] = ()
        self._plan_index = -1
        self._pos = 0

    @property
    def tried_count(self) -> int:
        return self.N - self._pool_size

    def _explore(self, rng) -> int:
        if self._pool_size == 0:
            return int(rng.integers(self.N))
        if self._pool is None:
            self._pool = np.arange(self.N, dtype=np.int64)
        j = int(rng.integers(self._pool_size))
        seq = int(self._pool[j])
        self._pool_size -= 1
        self._pool[j] = self._pool[self._pool_size]
        return seq

    def plan_epoch(self, rng: np.random.Generator) -> int:
        if self.winner is not None and (self.epsilon == 1.0 or rng.random() < self.epsilon):
            idx = self.winner
        else:
            idx = self._explore(rng)
        self._plan_index = idx
        self._plan = sequence_digits(idx, self.n, self.M)
        return idx

    def observe_epoch(self, seq_index: int, responses: Sequence[RewardedPercept]) -> None:
        if self.winner is None and sum(r.reward for r in responses) > 0:
            self.winner = int(seq_index)

    def act(self, percept: RewardedPercept, rng: np.random.Generator) -> int:
        if self._pos == 0:
            self.plan_epoch(rng)
        a = self._plan[self._pos]
        self._pos = (self._pos + 1) % self.M
        return a

    def learn(self, percept: RewardedPercept) -> None:
        if self.winner is None and percept.reward > 0:
            self.winner = self._plan_index


# ---------------------------------------------------------------- interaction


def interact(agent: Agent, env, steps: int, rng: np.random.Generator,
             history: History | None = None) -> History:
    """Run ``steps`` classical exchanges, extending ``history`` in place."""
    if history is None:
        history = History(env.M)
    percept = history.percepts[-1]
    for _ in range(int(steps)):
        action = agent.act(percept, rng)
        percept = env.step(action, rng)
        history.append(action, percept)
        if percept.reward > 0:
            agent.learn(percept)
    return history


def interact_epochs(agent: Agent, env, epochs: int, rng: np.random.Generator,
                    history: History | None = None) -> History:
    """Epoch-level driver; produces the same history as :func:`interact` with
    ``epochs * M`` steps when both start on an epoch boundary."""
    if not agent.epoch_planning:
        return interact(agent, env, epochs * env.M, rng, history)
    if history is None:
        history = History(env.M)
    n, M = env.n, env.M
    for _ in range(int(epochs)):
        idx = agent.plan_epoch(rng)
        responses = env.respond_epoch(idx, rng)
        for a, r in zip(sequence_digits(idx, n, M), responses):
            history.append(a, r)
        agent.observe_epoch(idx, responses)
    return history


# ---------------------------------------------------------------- figures of merit


@dataclass(frozen=True)
class MeritFunction:
    """Per-epoch reward frequency over the steps ``[offset, offset + horizon)``."""

    kind: str = "epoch_reward_rate"
    horizon: int | None = None
    offset: int = 0

    def __post_init__(self):
        if self.kind != "epoch_reward_rate":
            raise ValidationError(f"unknown merit kind {self.kind!r}")


def rate(history: History, merit: MeritFunction | None = None) -> float:
    merit = merit or MeritFunction()
    stop = None if merit.horizon is None else merit.offset + merit.horizon
    ep = history.epoch_rewards(merit.offset, stop)
    if ep.size == 0:
        return 0.0
    return float(np.count_nonzero(ep > 0) / ep.size)


def expected_rate(weighted: Iterable[tuple[float, History]], merit: MeritFunction | None = None) -> float:
    """Convex-linear extension of :func:`rate` to a distribution over histories."""
    total = 0.0
    mass = 0.0
    for p, h in weighted:
        total += p * rate(h, merit)
        mass += p
    if abs(mass - 1) > 1e-9:
        raise ValidationError("history weights must sum to 1")
    return total


# ---------------------------------------------------------------- luck favoring


def replay_conditioned(agent_factory: Callable[[], Agent], env_factory: Callable[[], object],
                       h: History, rng: np.random.Generator, restart_cap: int = RESTART_CAP):
    """Build ``A(h)`` and ``E(h)`` by replay with post-selection.

    Fresh instances are driven through the history; whenever the agent's
    sampled action or the environment's response deviates from ``h`` both are
    discarded and the replay restarts.  Returns ``(agent, env, restarts)``.
    """
    for attempt in range(int(restart_cap)):
        agent = agent_factory()
        env = env_factory()
        ok = True
        for i, a in enumerate(h.actions):
            if agent.act(h.percepts[i], rng) != a:
                ok = False
                break
            resp = env.step(a, rng)
            if resp != h.percepts[i + 1]:
                ok = False
                break
            if resp.reward > 0:
                agent.learn(resp)
        if ok:
            return agent, env, attempt
    raise InfeasibleHistoryError(f"history not reproduced within {restart_cap} restarts")


def luck_favoring_check(agent_factory: Callable[[], Agent], env_factory: Callable[[], object],
                        h: History, h2: History, T: int, trials: int, rng: np.random.Generator,
                        restart_cap: int = RESTART_CAP, z: float = 3.0) -> dict:
    """Monte-Carlo test of the luck-favoring ordering for one pair of histories.

    ``holds`` is true when the future-rate ordering is not contradicted (beyond
    ``z`` standard errors) by the ordering of the histories' own rates.
    """
    if h.steps != h2.steps:
        raise ValidationError("luck-favoring comparison needs equal-length histories")
    results = []
    for hist in (h, h2):
        vals = np.empty(trials)
        for i in range(trials):
            agent, env, _ = replay_conditioned(agent_factory, env_factory, hist, rng, restart_cap)
            cont = interact(agent, env, T, rng, History(env.M))
            vals[i] = rate(cont)
        results.append(vals)
    r1, r2 = results
    m1, m2 = float(r1.mean()), float(r2.mean())
    se = math.sqrt(r1.var(ddof=1) / trials + r2.var(ddof=1) / trials) if trials > 1 else 0.0
    margin = z * se + 1e-12
    past1, past2 = rate(h), rate(h2)
    if past1 > past2:
        holds = m1 >= m2 - margin
    elif past1 < past2:
        holds = m2 >= m1 - margin
    else:
        holds = abs(m1 - m2) <= margin
    return {"rate_h": m1, "rate_h2": m2, "past_rate_h": past1, "past_rate_h2": past2,
            "stderr": se, "holds": bool(holds)}


# ---------------------------------------------------------------- fixtures


def env_to_fixture(env) -> dict:
    if isinstance(env, EpochalDeterministicEnv):
        out = {"kind": "single-win" if env.is_single_win else "multi-reward", "n": env.n, "M": env.M,
               "lambda_max": env.lambda_max, "num_percepts": env.alphabet.num_percepts - 1}
        if env.is_single_win:
            out["winner_sequence"] = list(sequence_digits(int(env.winners()[0]), env.n, env.M))
        else:
            out["reward_table"] = env.reward_table.tolist()
        out["percept_table"] = env.percept_table.tolist()
        return out
    if isinstance(env, StochasticEpochalEnv):
        out = {"kind": "stochastic", "n": env.n, "M": env.M, "num_percepts": env.num_percept_symbols}
        if env.percept_probs is None:
            out["reward_prob_table"] = env.reward_prob.tolist()
        else:
            out["kind"] = "invasion-game"
            out["percept_table"] = env.percept_probs.tolist()
            out["reward_table"] = env.pair_rewards.tolist()
        return out
    raise TypeError(f"cannot serialize {type(env).__name__}")


def env_from_fixture(data: dict):
    try:
        n, M = int(data["n"]), int(data["M"])
        kind = data.get("kind")
        if n < 2 or M < 1:
            raise ValidationError("fixture needs n >= 2 and M >= 1")
        if kind in ("stochastic", "invasion-game") or "reward_prob_table" in data:
            if "reward_prob_table" in data:
                return StochasticEpochalEnv(Alphabet.indexed(n, int(data.get("num_percepts", 1))), M,
                                            reward_prob=data["reward_prob_table"])
            return StochasticEpochalEnv(Alphabet.indexed(n, int(data["num_percepts"])), M,
                                        percept_probs=data["percept_table"], reward_table=data["reward_table"])
        pt = np.asarray(data.get("percept_table", np.zeros((n**M, M))), dtype=np.int64)
        n_perc = int(data.get("num_percepts", max(1, int(pt.max(initial=0)))))
        alphabet = Alphabet.indexed(n, n_perc)
        if "winner_sequence" in data:
            env = EpochalDeterministicEnv.single_win(n, M, [int(x) for x in data["winner_sequence"]],
                                                     pt, alphabet=alphabet)
        else:
            env = EpochalDeterministicEnv(alphabet, M, pt, data["reward_table"], data.get("lambda_max"))
        if kind == "single-win" and not env.is_single_win:
            raise ValidationError("fixture declared single-win but does not have a unique winner")
        return env
    except KeyError as exc:
        raise ValidationError(f"fixture missing field {exc}") from None
