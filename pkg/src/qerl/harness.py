"""Experiment orchestration: fixtures, seeded batch runs, aggregation and output.

Every trial draws from its own generator seeded by ``(seed, trial)``; the
environment fixture, when generated rather than loaded, comes from a separate
stream of the same seed.  Reports are serialized with sorted keys and no
timing information, so equal configs give byte-identical files.  Wall-clock
time goes to a separate ``*_timing.json``.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any

import numpy as np

from .agent_env import (
    Alphabet,
    EpochalDeterministicEnv,
    EpsilonGreedyAgent,
    StochasticEpochalEnv,
    ValidationError,
    env_from_fixture,
    env_to_fixture,
)
from .constants import DENSE_DIM_CAP, RESTART_CAP
from .oracles import build_counting_oracle, build_phase_flip_oracle, build_purified_env_unitary, build_stochastic_oracle
from .qagent import CSV_FIELDS, run_quantum_enhanced
from .search import (
    amplify_above_pmin,
    amplitude_amplify_threshold,
    default_bits,
    find_max_reward,
    grover_randomized,
    sample_rewarding_pair,
    threshold_grid,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

KINDS = ("search", "learn-compare", "stochastic-search", "lemma-verify", "structural-pair")
SEARCH_MODES = ("grover", "threshold", "max")
FIXTURE_KINDS = ("single-win", "multi-reward", "stochastic", "invasion-game")
DEFAULT_TRIALS = {"search": 200, "learn-compare": 200, "stochastic-search": 200,
                  "lemma-verify": 1, "structural-pair": 200}

# stream tag separating the fixture generator from the per-trial generators
_FIXTURE_STREAM = (1,)

CSV_COLUMNS: dict[str, tuple[str, ...]] = {
    "search": ("trial", "mode", "N", "M", "threshold", "found", "value", "success", "verified",
               "oracle_queries", "iterations", "verifications", "interaction_steps", "classical_epochs",
               "classical_steps"),
    "learn-compare": ("trial",) + CSV_FIELDS + ("t_prep", "oracle_queries", "restarts", "seen_winner_c"),
    "stochastic-search": ("trial", "N", "M", "p_min", "bits", "found", "value", "success", "above_pmin",
                          "oracle_queries", "oracle_uses", "interaction_steps", "audit_epochs", "warnings"),
    "structural-pair": ("trial", "N", "M", "gamma_sq", "action", "percepts", "rewarded", "success",
                        "oracle_queries", "oracle_calls"),
    "lemma-verify": ("trial", "lemma", "holds", "max_trace_distance"),
}


class TrialError(RuntimeError):
    """A trial raised; ``trial`` is its index and ``__cause__`` the original error."""

    def __init__(self, trial: int, exc: BaseException):
        super().__init__(f"trial {trial}: {type(exc).__name__}: {exc}")
        self.trial = trial


# ---------------------------------------------------------------- configuration


@dataclass
class ExperimentConfig:
    kind: str
    n: int = 2
    M: int = 2
    k: float | None = None
    epsilon: float = 1.0
    trials: int | None = None
    seed: int = 0
    T_eval: int | None = None
    fixture: str | None = None
    fixture_params: dict = field(default_factory=dict)
    mode: str = "grover"
    threshold: int | None = None
    budget: int | None = None
    p_min: float = 0.5
    bits: int | None = None
    schedule: str = "exact"
    restart_cap: int = RESTART_CAP
    out_dir: str | None = None
    workers: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        if "kind" not in data:
            raise ValidationError("config needs a 'kind'")
        return cls(**data)

    @classmethod
    def from_toml(cls, path: str | Path, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def trial_count(self) -> int:
        return DEFAULT_TRIALS.get(self.kind, 1) if self.trials is None else int(self.trials)

    @property
    def k_value(self) -> float:
        return float(self.M) if self.k is None else float(self.k)

    def validate(self) -> "ExperimentConfig":
        """Check ranges and reject anything above the dense caps before allocation."""
        if self.kind not in KINDS:
            raise ValidationError(f"unknown experiment kind {self.kind!r}; choose from {KINDS}")
        if not 0 <= int(self.seed) < 2**63:
            raise ValidationError("seed must be a non-negative 63-bit integer")
        if self.trial_count < 1:
            raise ValidationError("trials must be at least 1")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.kind == "lemma-verify":
            return self
        if self.fixture is None:
            if self.n < 2 or self.M < 1:
                raise ValidationError("need n >= 2 and M >= 1")
            _guard_dim(self.n**self.M, "n^M")
        if self.kind == "search":
            if self.mode not in SEARCH_MODES:
                raise ValidationError(f"unknown search mode {self.mode!r}")
            if self.mode == "threshold" and self.threshold is not None and self.threshold < 0:
                raise ValidationError("threshold must be non-negative")
        if self.kind == "learn-compare":
            if not 0 <= self.epsilon <= 1:
                raise ValidationError("epsilon must lie in [0, 1]")
            if self.k_value <= 0:
                raise ValidationError("k must be positive")
            if self.T_eval is not None and (self.T_eval < 0 or self.T_eval % self.M):
                raise ValidationError("T_eval must be a non-negative multiple of M")
        if self.kind == "stochastic-search":
            if not 0 < self.p_min <= 1:
                raise ValidationError("p_min must lie in (0, 1]")
            bits = default_bits(self.p_min) if self.bits is None else int(self.bits)
            if bits < 1:
                raise ValidationError("bits must be at least 1")
            if self.fixture is None:
                _guard_dim(self.n**self.M * 2 ** (bits + 1), "phase-estimation register")
        if self.kind == "structural-pair":
            if self.schedule not in ("exact", "randomized"):
                raise ValidationError(f"unknown schedule {self.schedule!r}")
            if self.fixture is None:
                S = self.n**self.M
                _guard_dim(self.n**self.M * S * S * 2 * 2, "purified oracle")
        return self


def _guard_dim(dim: int, what: str) -> None:
    if dim > DENSE_DIM_CAP:
        raise ValidationError(f"{what} dimension {dim} exceeds the dense cap {DENSE_DIM_CAP}")


# ---------------------------------------------------------------- fixtures


def threshold_gap_cells(reward_prob, p_min: float, bits: int) -> float:
    """Smallest distance, in grid cells, between any ``arcsin sqrt(p_r)`` and the threshold."""
    t_real, _ = threshold_grid(p_min, bits)
    pos = np.arcsin(np.sqrt(np.clip(np.asarray(reward_prob, dtype=float), 0, 1))) * 2**bits / math.pi
    return float(np.min(np.abs(pos - t_real)))


def validate_threshold_gap(reward_prob, p_min: float, bits: int | None = None) -> int:
    """Raise unless no reward probability lies within one grid cell of the threshold.

    Returns the number of bits used.
    """
    bits = default_bits(p_min) if bits is None else int(bits)
    gap = threshold_gap_cells(reward_prob, p_min, bits)
    if gap < 1:
        raise ValidationError(f"a reward probability lies {gap:.3f} grid cells from the threshold at {bits} bits")
    return bits


def _check_size(n: int, M: int) -> None:
    if n < 2 or M < 1:
        raise ValidationError("need n >= 2 and M >= 1")
    _guard_dim(n**M, "n^M")


def generate_fixture(params: dict, rng: np.random.Generator) -> dict:
    """Build a fixture dictionary and verify its promises by brute force.

    ``params["kind"]`` is one of single-win, multi-reward, stochastic or
    invasion-game.  Tables supplied in ``params`` are used as given and
    validated; missing ones are drawn from ``rng``.
    """
    kind = params.get("kind", "single-win")
    n, M = int(params.get("n", 2)), int(params.get("M", 1))
    _check_size(n, M)
    N = n**M
    meta: dict[str, Any] = {}
    if kind == "single-win":
        if "rewards" in params:
            r = np.asarray(params["rewards"], dtype=np.int64).reshape(-1)
            if r.size != N or int((r != 0).sum()) != 1 or int(r.max()) != 1 or r.min() < 0:
                raise ValidationError("single-win rewards need exactly one entry equal to 1 and zeros elsewhere")
            winner = int(np.flatnonzero(r)[0])
        else:
            winner = int(params["winner"]) if "winner" in params else int(rng.integers(N))
        env = EpochalDeterministicEnv.single_win(n, M, winner, params.get("percept_table"))
        if int((env.total_rewards() > 0).sum()) != 1:
            raise ValidationError("winner is not unique")
        meta["winner"] = winner
    elif kind == "multi-reward":
        lam = int(params.get("lambda_max", 2))
        if "rewards" in params:
            r = np.asarray(params["rewards"], dtype=np.int64)
        else:
            r = rng.integers(0, lam + 1, size=N)
        pt = params.get("percept_table", np.zeros((N, M), dtype=np.int64))
        env = EpochalDeterministicEnv(Alphabet.indexed(n, max(1, int(np.max(pt)))), M, pt, r,
                                      lambda_max=max(lam, int(np.max(r))))
        totals = env.total_rewards()
        meta["max_total"] = int(totals.max())
        meta["argmax"] = np.flatnonzero(totals == totals.max()).tolist()
    elif kind == "stochastic":
        if "reward_prob" in params:
            rp = np.asarray(params["reward_prob"], dtype=float)
        else:
            good = int(params.get("good_count", max(1, N // 4)))
            if not 0 <= good <= N:
                raise ValidationError("good_count must lie in [0, N]")
            rp = np.full(N, float(params.get("p_low", 0.1)))
            rp[rng.choice(N, good, replace=False)] = float(params.get("p_high", 0.9))
        env = StochasticEpochalEnv(Alphabet.indexed(n), M, reward_prob=rp)
        if "p_min" in params:
            p_min = float(params["p_min"])
            bits = validate_threshold_gap(env.reward_prob, p_min, params.get("bits"))
            meta.update(p_min=p_min, bits=bits,
                        gap_cells=threshold_gap_cells(env.reward_prob, p_min, bits),
                        above=np.flatnonzero(env.reward_prob >= p_min).tolist())
    elif kind == "invasion-game":
        correct = params.get("correct")
        env = StochasticEpochalEnv.invasion_game(n, M, correct)
        S = env.percept_probs.size
        _guard_dim(N * S * S * (env.lambda_max + 1) * 2, "purified oracle")
        rewarded = (env.pair_rewards > 0).astype(float)
        meta["gamma_sq"] = float(env.percept_probs @ rewarded.mean(axis=1))
    else:
        raise ValidationError(f"unknown fixture kind {kind!r}; choose from {FIXTURE_KINDS}")
    out = env_to_fixture(env)
    if kind == "stochastic":
        out["kind"] = "stochastic"
    out["metadata"] = meta
    out["fingerprint"] = env.fingerprint()
    # round trip so a promise broken by serialization is caught here
    back = env_from_fixture(out)
    if back.fingerprint() != env.fingerprint():
        raise ValidationError("fixture does not round-trip")
    return out


def write_fixture(data: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, sort_keys=True, indent=1) + "\n")
    return path


def load_fixture(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read fixture {path}: {exc}") from None
    env = env_from_fixture(data)
    _guard_dim(env.N, "n^M")
    return data


def default_fixture_params(config: ExperimentConfig) -> dict:
    p = {"n": config.n, "M": config.M}
    if config.kind == "search":
        p["kind"] = "single-win" if config.mode == "grover" else "multi-reward"
    elif config.kind == "learn-compare":
        p["kind"] = "single-win"
    elif config.kind == "stochastic-search":
        p.update(kind="stochastic", p_min=config.p_min)
        if config.bits is not None:
            p["bits"] = config.bits
    elif config.kind == "structural-pair":
        p["kind"] = "invasion-game"
    p.update(config.fixture_params)
    return p


def fixture_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=_FIXTURE_STREAM))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trial)]))


def resolve_fixture(config: ExperimentConfig) -> dict | None:
    if config.kind == "lemma-verify":
        return None
    if config.fixture is not None:
        return load_fixture(config.fixture)
    return generate_fixture(default_fixture_params(config), fixture_rng(config.seed))


# ---------------------------------------------------------------- trials


@lru_cache(maxsize=8)
def _env_for(fixture_json: str):
    return env_from_fixture(json.loads(fixture_json))


def classical_explorer_epochs(env, target: float, rng: np.random.Generator) -> int | None:
    """Epochs an explorer trying sequences in uniformly random order, never
    repeating one, needs before an epoch's total reward reaches ``target``."""
    for epochs, a in enumerate(rng.permutation(env.N), start=1):
        if sum(r.reward for r in env.respond_epoch(int(a))) >= target:
            return epochs
    return None


def _search_trial(cfg: ExperimentConfig, env, rng) -> list[dict]:
    N = env.N
    totals = env.total_rewards()
    rec: dict[str, Any] = {"mode": cfg.mode, "N": N, "M": env.M}
    if cfg.mode == "grover":
        oracle = build_phase_flip_oracle(env)
        out = grover_randomized(oracle, N, rng, env, cfg.budget)
        target, rec["threshold"] = 1, None
    elif cfg.mode == "threshold":
        thr = 1 if cfg.threshold is None else int(cfg.threshold)
        out = amplitude_amplify_threshold(build_counting_oracle(env), thr, rng, env, cfg.budget)
        target, rec["threshold"] = thr, thr
    else:
        out = find_max_reward(build_counting_oracle(env), rng, env, cfg.budget)
        target, rec["threshold"] = int(totals.max()), None
    verified = out.found is not None and int(totals[out.found]) >= target
    epochs = classical_explorer_epochs(env.fresh(), target, rng)
    rec.update(found=out.found, value=None if out.found is None else int(totals[out.found]),
               success=bool(out.success), verified=bool(verified), oracle_queries=out.oracle_queries,
               iterations=out.iterations, verifications=out.verifications,
               interaction_steps=out.interaction_steps, classical_epochs=epochs,
               classical_steps=None if epochs is None else epochs * env.M)
    return [rec]


def _learn_trial(cfg: ExperimentConfig, env, rng) -> list[dict]:
    n, M, eps = env.n, env.M, cfg.epsilon
    rep = run_quantum_enhanced(lambda: EpsilonGreedyAgent(n, M, eps), env, cfg.k_value, cfg.T_eval, rng,
                               cfg.restart_cap)
    rec = {k: getattr(rep, k) for k in CSV_FIELDS}
    rec.update(t_prep=rep.t_prep, oracle_queries=rep.oracle_queries, restarts=rep.restarts,
               seen_winner_c=rep.seen_winner_c)
    return [rec]


def _stochastic_trial(cfg: ExperimentConfig, env, rng) -> list[dict]:
    oracle = build_stochastic_oracle(env)
    out = amplify_above_pmin(oracle, cfg.p_min, rng, bits=cfg.bits, env=env, budget=cfg.budget)
    return [{"N": env.N, "M": env.M, "p_min": cfg.p_min, "bits": out.extra["bits"], "found": out.found,
             "value": out.value, "success": bool(out.success),
             "above_pmin": bool(out.value is not None and out.value >= cfg.p_min),
             "oracle_queries": out.oracle_queries, "oracle_uses": out.extra["oracle_uses"],
             "interaction_steps": out.interaction_steps, "audit_epochs": out.extra["audit_samples"],
             "warnings": len(out.warnings)}]


def _structural_trial(cfg: ExperimentConfig, env, rng) -> list[dict]:
    se = build_purified_env_unitary(env)
    a, s, out = sample_rewarding_pair(se, rng, cfg.schedule, cfg.budget)
    return [{"N": env.N, "M": env.M, "gamma_sq": se.info["gamma_sq"], "action": a, "percepts": s,
             "rewarded": bool(env.pair_rewards[s, a] > 0), "success": bool(out.success),
             "oracle_queries": out.oracle_queries, "oracle_calls": out.extra["oracle_calls"]}]


def _lemma_trial(cfg: ExperimentConfig, env, rng) -> list[dict]:
    from .tester import lemma_reports

    return [{"lemma": r["lemma"], "holds": bool(r["holds"]), "max_trace_distance": float(r["max_trace_distance"]),
             "details": r["details"]} for r in lemma_reports(rng=rng)]


_TRIALS = {"search": _search_trial, "learn-compare": _learn_trial, "stochastic-search": _stochastic_trial,
           "structural-pair": _structural_trial, "lemma-verify": _lemma_trial}


def run_trial(config: dict, fixture_json: str | None, trial: int) -> list[dict]:
    """One trial in isolation; picklable entry point for the worker pool."""
    cfg = ExperimentConfig.from_dict(config)
    env = None if fixture_json is None else _env_for(fixture_json).fresh()
    try:
        rows = _TRIALS[cfg.kind](cfg, env, trial_rng(cfg.seed, trial))
    except Exception as exc:
        raise TrialError(trial, exc) from exc
    return [{"trial": trial, **_plain(r)} for r in rows]


def _plain(v):
    """Recursively convert numpy scalars and containers to JSON types."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


# ---------------------------------------------------------------- aggregation


def aggregate_records(records: list[dict]) -> dict:
    """Mean and standard error of every numeric column, ignoring empty cells."""
    columns: dict[str, list[float]] = {}
    for rec in records:
        for k, v in rec.items():
            if k == "trial" or v is None or not isinstance(v, (int, float)):
                continue
            columns.setdefault(k, []).append(float(v))
    out = {}
    for k, xs in columns.items():
        n = len(xs)
        mean = math.fsum(xs) / n
        var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1) if n > 1 else 0.0
        out[k] = {"count": n, "mean": mean, "stderr": math.sqrt(var / n)}
    return out


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def loglinear_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``x``."""
    return float(np.polyfit(np.asarray(x, float), np.log(np.asarray(y, float)), 1)[0])


# ---------------------------------------------------------------- reports


@dataclass
class RunReport:
    config: dict
    fixture: dict | None
    records: list[dict]
    aggregates: dict
    wall_clock: float = 0.0

    @property
    def kind(self) -> str:
        return self.config["kind"]

    def to_dict(self, timing: bool = False) -> dict:
        d = {"config": self.config, "fixture": self.fixture, "records": self.records,
             "aggregates": self.aggregates, "csv_columns": list(CSV_COLUMNS[self.kind])}
        if timing:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS[self.kind], lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for rec in self.records:
            w.writerow({k: _csv_cell(rec.get(k)) for k in CSV_COLUMNS[self.kind]})
        return buf.getvalue()

    def write(self, out_dir: str | Path, stem: str | None = None) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        paths = {"json": out / f"{stem}_report.json", "csv": out / f"{stem}.csv",
                 "timing": out / f"{stem}_timing.json"}
        paths["json"].write_text(self.to_json())
        paths["csv"].write_text(self.to_csv())
        paths["timing"].write_text(json.dumps({"wall_clock_seconds": self.wall_clock}) + "\n")
        return paths

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        d = json.loads(text)
        return cls(d["config"], d["fixture"], d["records"], d["aggregates"], d.get("wall_clock", 0.0))


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    return v


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Run every trial of ``config``, aggregate, and write outputs if ``out_dir`` is set."""
    config.validate()
    start = time.perf_counter()
    fixture = resolve_fixture(config)
    fixture_json = None if fixture is None else json.dumps(fixture, sort_keys=True)
    cfg = config.to_dict()
    cfg["trials"] = config.trial_count
    cfg.pop("out_dir")
    cfg.pop("workers")
    trials = range(config.trial_count)
    if config.workers > 1 and config.trial_count > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            chunks = list(pool.map(run_trial, [cfg] * len(trials), [fixture_json] * len(trials), trials,
                                   chunksize=max(1, len(trials) // (4 * config.workers))))
    else:
        chunks = [run_trial(cfg, fixture_json, t) for t in trials]
    records = [r for chunk in chunks for r in chunk]
    report = RunReport(cfg, fixture, records, aggregate_records(records), time.perf_counter() - start)
    if config.out_dir is not None:
        report.write(config.out_dir)
    return report
