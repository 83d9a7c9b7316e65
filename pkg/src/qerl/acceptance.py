"""Acceptance suite: ten numbered criteria, each a pass/fail verdict with details.

Criteria 1 to 9 check numerical claims at desk scale; criterion 10 runs 1 to 9
a second time and compares the serialized reports byte for byte.  Timing is
kept out of the serialized report and judged separately against each
criterion's budget.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agent_env import Alphabet, EpochalDeterministicEnv, EpsilonGreedyAgent, StochasticEpochalEnv, interact_epochs
from .harness import ExperimentConfig, _plain, loglinear_slope, loglog_slope, run_experiment, trial_rng
from .oracles import build_phase_flip_oracle, build_stochastic_oracle
from .qagent import exploration_budget, seen_winner_bound, seen_winner_simplified
from .search import estimate_distribution, grover_success_probability, phase_estimate_reward
from .tester import (
    INVARIANCE_TOL,
    classicalize,
    fixture_corpus,
    grover_interaction_fixture,
    lemma_reports,
    sample_comm_register,
    verify_classical_interaction_invariance,
)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict
    seconds: float = 0.0
    limit_seconds: float = math.inf

    @property
    def within_time(self) -> bool:
        return self.seconds < self.limit_seconds

    @property
    def ok(self) -> bool:
        return self.passed and self.within_time

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        note = "" if self.within_time else f" (over time budget {self.limit_seconds:.0f} s)"
        return f"criterion {self.number:2d} {verdict}: {self.title} [{self.seconds:.1f} s]{note}"


@dataclass
class AcceptanceReport:
    seed: int
    results: list[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.ok for r in self.results)

    def to_json(self) -> str:
        body = {"seed": self.seed,
                "criteria": [{"number": r.number, "title": r.title, "passed": r.passed, "details": r.details}
                             for r in self.results if r.number != 10]}
        return json.dumps(_plain(body), sort_keys=True, indent=1) + "\n"

    def timing_json(self) -> str:
        return json.dumps({str(r.number): {"seconds": r.seconds, "limit_seconds": r.limit_seconds}
                           for r in self.results}, sort_keys=True, indent=1) + "\n"

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"json": out / "accept_report.json", "timing": out / "accept_timing.json",
                 "summary": out / "accept_summary.txt"}
        paths["json"].write_text(self.to_json())
        paths["timing"].write_text(self.timing_json())
        paths["summary"].write_text("\n".join(r.line() for r in self.results) + "\n")
        return paths


def _marked_env(N: int, m: int) -> EpochalDeterministicEnv:
    M = int(round(math.log2(N)))
    rewards = np.zeros(N, dtype=np.int64)
    rewards[:m] = 1
    return EpochalDeterministicEnv(Alphabet.indexed(2), M, np.zeros((N, M), dtype=np.int64), rewards, lambda_max=1)


# ---------------------------------------------------------------- criteria


def criterion_1(seed: int) -> tuple[bool, dict]:
    worst, checked = 0.0, 0
    for N in (4, 16, 64, 256, 1024, 4096):
        for m in sorted({1, 2, N // 4}):
            oracle = build_phase_flip_oracle(_marked_env(N, m))
            theta = math.asin(math.sqrt(m / N))
            for k in range(int(math.ceil(math.pi / (4 * theta))) + 3):
                p = grover_success_probability(oracle, k)
                worst = max(worst, abs(p - math.sin((2 * k + 1) * theta) ** 2))
                checked += 1
    return worst <= 1e-9, {"max_abs_error": worst, "cases": checked, "tolerance": 1e-9}


def criterion_2(seed: int) -> tuple[bool, dict]:
    Ms = list(range(2, 11))
    q, c = [], []
    for M in Ms:
        rep = run_experiment(ExperimentConfig(kind="search", n=2, M=M, trials=1000, seed=seed, budget=10**6))
        if not all(r["verified"] for r in rep.records):
            return False, {"error": f"unverified search result at M={M}"}
        q.append(rep.aggregates["oracle_queries"]["mean"])
        c.append(rep.aggregates["classical_epochs"]["mean"])
    N = [2**M for M in Ms]
    sq = loglog_slope(np.sqrt(N), q)
    sc = loglog_slope(N, c)
    ok = abs(sq - 1) <= 0.2 and abs(sc - 1) <= 0.1
    return ok, {"M": Ms, "mean_queries": q, "mean_classical_epochs": c, "quantum_slope_vs_sqrtN": sq,
                "classical_slope_vs_N": sc}


def criterion_3(seed: int) -> tuple[bool, dict]:
    n, M, k, trials = 2, 6, 2, 10_000
    N = n**M
    epochs = exploration_budget(N, k) + 1
    env = EpochalDeterministicEnv.single_win(n, M, int(trial_rng(seed, 10**9).integers(N)))
    hits = 0
    for t in range(trials):
        h = interact_epochs(EpsilonGreedyAgent(n, M, 1.0), env.fresh(), epochs, trial_rng(seed, t))
        hits += bool(h.rewards().any())
    p_hat = hits / trials
    bound = seen_winner_bound(N, epochs)
    target = seen_winner_simplified(N, k)
    sigma = math.sqrt(target * (1 - target) / trials)
    ok = p_hat <= bound + 3 * sigma and abs(p_hat - target) <= 3 * sigma + 0.1 * target
    return ok, {"epochs": epochs, "monte_carlo": p_hat, "product_bound": bound, "formula": target,
                "sigma": sigma}


def criterion_4(seed: int) -> tuple[bool, dict]:
    Ms = list(range(2, 7))
    rq, rc = [], []
    for M in Ms:
        rep = run_experiment(ExperimentConfig(kind="learn-compare", n=2, M=M, k=M, epsilon=1.0, trials=200,
                                              seed=seed, T_eval=exploration_budget(2**M, M) * M))
        rq.append(rep.aggregates["rate_q"]["mean"])
        rc.append(rep.aggregates["rate_c"]["mean"])
    target = -math.log(2) / 2
    slope = loglinear_slope(Ms, rc) if min(rc) > 0 else float("nan")
    gap = [a / b if b > 0 else math.inf for a, b in zip(rq, rc)]
    monotone = all(b > a for a, b in zip(gap, gap[1:]))
    slope_ok = bool(abs(slope - target) <= 0.4 * abs(target))
    ok = min(rq) >= 0.95 and slope_ok and monotone
    return ok, {"M": Ms, "rate_q": rq, "rate_c": rc, "gap": gap, "baseline_slope": slope,
                "target_slope": target, "slope_ok": slope_ok, "gap_monotone": monotone,
                "rate_q_ok": min(rq) >= 0.95}


def criterion_5(seed: int) -> tuple[bool, dict]:
    ks = [2, 4, 6]
    fails = []
    for k in ks:
        rep = run_experiment(ExperimentConfig(kind="learn-compare", n=2, M=6, k=k, epsilon=1.0, trials=1000,
                                              seed=seed))
        fails.append(rep.aggregates["failure_flag"]["mean"])
    C = max(f * 2**k for f, k in zip(fails, ks))
    monotone = all(b <= a for a, b in zip(fails, fails[1:])) and fails[-1] < fails[0]
    return monotone and C <= 4, {"k": ks, "failure_fraction": fails, "fitted_C": C, "monotone": monotone}


def criterion_6(seed: int) -> tuple[bool, dict]:
    rng = trial_rng(seed, 0)
    worst_classical, counter = 0.0, None
    for e in fixture_corpus():
        rep = verify_classical_interaction_invariance(e.agent, e.env, e.t)
        if e.classical:
            worst_classical = max(worst_classical, rep.max_trace_distance)
        elif e.name == "entangling":
            counter = rep.max_trace_distance
    reports = {r["lemma"]: r for r in lemma_reports(rng=rng)}
    twin = max(reports["classical-equivalent-any-tester"]["max_trace_distance"],
               reports["classical-tester-equivalent"]["max_trace_distance"])
    agent, env, moves = grover_interaction_fixture(4)
    shots = 10_000
    counts = sample_comm_register(agent, classicalize(env), moves, rng, shots)
    p_hat = counts[1] / shots
    sigma = math.sqrt(0.25 * 0.75 / shots)
    ok = (worst_classical < INVARIANCE_TOL and counter is not None and counter >= 0.1
          and twin < INVARIANCE_TOL and abs(p_hat - 0.25) <= 3 * sigma
          and all(r["holds"] for r in reports.values()))
    return ok, {"classical_max_distance": worst_classical, "entangling_distance": counter,
                "twin_max_distance": twin, "dephased_grover_success": p_hat, "sigma": sigma,
                "lemmas": {k: r["holds"] for k, r in reports.items()}}


def criterion_7(seed: int) -> tuple[bool, dict]:
    rng = trial_rng(seed, 0)
    exact = {}
    for p, index in ((0.0, 0), (0.5, 2), (1.0, 4)):
        oracle = build_stochastic_oracle(StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[p, p]))
        exact[str(p)] = float(estimate_distribution(oracle, 0, 3)[index])
    exact_ok = all(v >= 1 - 1e-9 for v in exact.values())
    oracle = build_stochastic_oracle(StochasticEpochalEnv(Alphabet.indexed(2), 1, reward_prob=[0.3, 0.3]))
    bits = 3
    best = round(math.asin(math.sqrt(0.3)) * 2**bits / math.pi)
    hits = sum(phase_estimate_reward(oracle, 0, bits, rng).grid_index == best for _ in range(1000))
    best_ok = hits / 1000 >= 0.4
    rep = run_experiment(ExperimentConfig(kind="stochastic-search", n=2, M=4, p_min=0.5, trials=1000, seed=seed,
                                          fixture_params={"good_count": 4, "p_high": 0.9, "p_low": 0.1}))
    found = [r for r in rep.records if r["found"] is not None]
    only_good = all(r["value"] == 0.9 for r in found)
    mean_q = rep.aggregates["oracle_queries"]["mean"]
    target = math.pi / 4 * math.sqrt(16 / 4)
    q_ok = target / 2 <= mean_q <= 2 * target
    ok = exact_ok and best_ok and only_good and q_ok
    return ok, {"exact_probabilities": exact, "best_estimate_frequency": hits / 1000,
                "bits": rep.records[0]["bits"], "found_runs": len(found), "only_good": only_good,
                "mean_queries": mean_q, "target_queries": target, "queries_within_factor_2": q_ok}


def criterion_8(seed: int) -> tuple[bool, dict]:
    thr = run_experiment(ExperimentConfig(
        kind="search", n=2, M=4, mode="threshold", threshold=2, trials=1000, seed=seed,
        fixture_params={"rewards": [2, 0, 1, 0, 0, 0, 0, 3, 0, 0, 1, 0, 0, 0, 0, 0], "lambda_max": 3}))
    thr_ok = all(r["success"] and r["verified"] for r in thr.records)
    rewards = [0] * 8
    rewards[5] = 2
    mx = run_experiment(ExperimentConfig(kind="search", n=2, M=3, mode="max", trials=1000, seed=seed,
                                         fixture_params={"rewards": rewards, "lambda_max": 2}))
    hits = sum(r["found"] == 5 for r in mx.records)
    return thr_ok and hits >= 900, {"threshold_all_verified": thr_ok, "max_matches": hits, "runs": 1000}


def criterion_9(seed: int) -> tuple[bool, dict]:
    gamma_sq, queries, rewarded = [], [], []
    for M in (1, 2, 3):
        rep = run_experiment(ExperimentConfig(kind="structural-pair", n=2, M=M, trials=1000, seed=seed))
        succ = [r for r in rep.records if r["success"]]
        rewarded.append(sum(r["rewarded"] for r in succ) / max(1, len(succ)))
        gamma_sq.append(rep.records[0]["gamma_sq"])
        queries.append(rep.aggregates["oracle_queries"]["mean"])
    slope = loglog_slope([1 / math.sqrt(g) for g in gamma_sq], queries)
    ok = all(r == 1.0 for r in rewarded) and abs(slope - 1) <= 0.2
    return ok, {"gamma_sq": gamma_sq, "mean_queries": queries, "rewarded_fraction": rewarded, "slope": slope}


CRITERIA: dict[int, tuple[str, Callable[[int], tuple[bool, dict]], float]] = {
    1: ("Grover amplitude law", criterion_1, 30),
    2: ("quadratic exploration speedup", criterion_2, 180),
    3: ("classical baseline formula", criterion_3, 30),
    4: ("exponential short-horizon gap", criterion_4, 300),
    5: ("exploration failure bound", criterion_5, 120),
    6: ("lemma suite", criterion_6, 60),
    7: ("stochastic pipeline", criterion_7, 120),
    8: ("counting, threshold and max search", criterion_8, 60),
    9: ("structural dependence", criterion_9, 60),
}


def run_criterion(number: int, seed: int) -> CriterionResult:
    title, fn, limit = CRITERIA[number]
    start = time.perf_counter()
    passed, details = fn(seed)
    return CriterionResult(number, title, bool(passed), _plain(details), time.perf_counter() - start, limit)


def run_acceptance(seed: int = 0, only: list[int] | None = None, reproducibility: bool = True,
                   echo: Callable[[str], None] | None = None) -> AcceptanceReport:
    """Run the criteria in order.  With ``reproducibility`` (and no ``only``
    filter) criterion 10 repeats 1 to 9 and compares serialized reports."""
    numbers = sorted(CRITERIA) if only is None else sorted(n for n in only if n in CRITERIA)
    report = AcceptanceReport(seed)
    for n in numbers:
        res = run_criterion(n, seed)
        report.results.append(res)
        if echo:
            echo(res.line())
    if reproducibility and (only is None or 10 in only):
        start = time.perf_counter()
        base = numbers or sorted(CRITERIA)
        first = (report if numbers else AcceptanceReport(seed, [run_criterion(n, seed) for n in base])).to_json()
        second = AcceptanceReport(seed, [run_criterion(n, seed) for n in base]).to_json()
        res = CriterionResult(10, "byte-identical reports under a fixed seed", first == second,
                              {"bytes": len(first), "identical": first == second},
                              time.perf_counter() - start)
        report.results.append(res)
        if echo:
            echo(res.line())
    return report
