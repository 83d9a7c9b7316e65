from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qerl.agent_env import StochasticEpochalEnv, ValidationError, env_from_fixture, sequence_digits
from qerl.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    RunReport,
    TrialError,
    aggregate_records,
    generate_fixture,
    load_fixture,
    run_experiment,
    threshold_gap_cells,
    validate_threshold_gap,
    write_fixture,
)
from qerl.oracles import build_purified_env_unitary


def rng(seed=0):
    return np.random.default_rng(seed)


def test_single_win_fixture_has_one_winner():
    data = generate_fixture({"kind": "single-win", "n": 2, "M": 2}, rng())
    env = env_from_fixture(data)
    totals = [sum(r.reward for r in env.fresh().respond_epoch(a)) for a in range(4)]
    assert sorted(totals) == [0, 0, 0, 1]
    assert data["metadata"]["winner"] == totals.index(1)
    assert data["winner_sequence"] == list(sequence_digits(totals.index(1), 2, 2))


@pytest.mark.parametrize("rewards", [[0, 0, 0, 0], [1, 0, 1, 0], [0, 2, 0, 0]])
def test_single_win_promise_violation(rewards):
    with pytest.raises(ValidationError):
        generate_fixture({"kind": "single-win", "n": 2, "M": 2, "rewards": rewards}, rng())


def test_fixture_size_guard():
    with pytest.raises(ValidationError):
        generate_fixture({"kind": "single-win", "n": 2, "M": 15}, rng())
    with pytest.raises(ValidationError):
        generate_fixture({"kind": "single-win", "n": 1, "M": 3}, rng())


def test_multi_reward_fixture_records_maximum():
    data = generate_fixture({"kind": "multi-reward", "n": 2, "M": 3, "rewards": [0, 1, 0, 0, 0, 2, 0, 2],
                             "lambda_max": 2}, rng())
    assert data["metadata"] == {"max_total": 2, "argmax": [5, 7]}


def test_stochastic_gap_validator():
    # grid position of arcsin sqrt(p) at 4 bits, computed independently
    def pos(p):
        return math.asin(math.sqrt(p)) * 16 / math.pi

    probs = [0.9] * 4 + [0.1] * 12
    expected = min(abs(pos(p) - pos(0.5)) for p in probs)
    assert threshold_gap_cells(probs, 0.5, 4) == pytest.approx(expected, abs=1e-12)
    assert validate_threshold_gap(probs, 0.5) == 4
    data = generate_fixture({"kind": "stochastic", "n": 2, "M": 4, "reward_prob": probs, "p_min": 0.5}, rng())
    assert data["metadata"]["bits"] == 4 and data["metadata"]["above"] == [0, 1, 2, 3]
    with pytest.raises(ValidationError):
        generate_fixture({"kind": "stochastic", "n": 2, "M": 2, "reward_prob": [0.55, 0.1, 0.1, 0.1],
                          "p_min": 0.5}, rng())


def test_stochastic_generated_counts():
    data = generate_fixture({"kind": "stochastic", "n": 2, "M": 4, "good_count": 4, "p_min": 0.5}, rng(3))
    env = env_from_fixture(data)
    assert isinstance(env, StochasticEpochalEnv)
    assert int((env.reward_prob >= 0.5).sum()) == 4


def test_invasion_game_overlap():
    data = generate_fixture({"kind": "invasion-game", "n": 2, "M": 1}, rng())
    assert data["metadata"]["gamma_sq"] == pytest.approx(0.5, abs=1e-15)
    # independent route: rewarded weight of S_E applied to the uniform action state
    se = build_purified_env_unitary(env_from_fixture(data))
    N, S, _, L = se.layout.dims
    psi = np.zeros(se.layout.total_dim, dtype=complex)
    psi.reshape(N, S, S, L)[:, 0, 0, 0] = 1 / math.sqrt(N)
    out = se.apply_array(psi).reshape(N, S, S, L)
    assert float(np.sum(np.abs(out[..., 1:]) ** 2)) == pytest.approx(0.5, abs=1e-12)


def test_unknown_fixture_kind():
    with pytest.raises(ValidationError):
        generate_fixture({"kind": "maze"}, rng())


def test_fixture_file_round_trip(tmp_path):
    data = generate_fixture({"kind": "single-win", "n": 3, "M": 2, "winner": 4}, rng())
    path = write_fixture(data, tmp_path / "f.json")
    assert load_fixture(path) == data


def test_learn_compare_csv_and_reproducibility(tmp_path):
    cfg = dict(kind="learn-compare", n=2, M=4, k=4, epsilon=1.0, trials=200, seed=11)
    a = run_experiment(ExperimentConfig(out_dir=str(tmp_path / "a"), **cfg))
    b = run_experiment(ExperimentConfig(out_dir=str(tmp_path / "b"), **cfg))
    for name in ("learn-compare.csv", "learn-compare_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.DictReader(io.StringIO((tmp_path / "a" / "learn-compare.csv").read_text())))
    assert len(rows) == 200 and tuple(rows[0]) == CSV_COLUMNS["learn-compare"]
    assert [int(r["trial"]) for r in rows] == list(range(200))
    assert all(r["gap"] != "" for r in rows)
    assert a.to_json() == b.to_json()
    timing = json.loads((tmp_path / "a" / "learn-compare_timing.json").read_text())
    assert timing["wall_clock_seconds"] > 0


def test_worker_pool_matches_serial():
    cfg = dict(kind="search", n=2, M=5, trials=12, seed=4)
    serial = run_experiment(ExperimentConfig(**cfg))
    pooled = run_experiment(ExperimentConfig(workers=2, **cfg))
    assert serial.to_json() == pooled.to_json()


def test_trial_streams_do_not_depend_on_trial_count():
    short = run_experiment(ExperimentConfig(kind="search", M=4, trials=3, seed=9))
    long = run_experiment(ExperimentConfig(kind="search", M=4, trials=8, seed=9))
    assert long.records[:3] == short.records


def test_aggregates_recompute_from_serialized_records():
    rep = run_experiment(ExperimentConfig(kind="stochastic-search", M=4, trials=40, seed=2,
                                          fixture_params={"good_count": 4}))
    back = RunReport.from_json(rep.to_json())
    assert aggregate_records(back.records) == back.aggregates


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(-1000, 1000),
                          st.floats(-1e6, 1e6, allow_nan=False)), min_size=1, max_size=30))
def test_aggregate_integrity(values):
    records = [{"trial": i, "x": v, "label": "a"} for i, v in enumerate(values)]
    agg = aggregate_records(json.loads(json.dumps(records)))
    xs = [float(v) for v in values if v is not None]
    if not xs:
        assert "x" not in agg
        return
    assert agg == aggregate_records(records)
    assert agg["x"]["count"] == len(xs)
    assert agg["x"]["mean"] == pytest.approx(float(np.mean(xs)), rel=1e-9, abs=1e-6)
    if len(xs) > 1:
        se = float(np.std(xs, ddof=1) / math.sqrt(len(xs)))
        assert agg["x"]["stderr"] == pytest.approx(se, rel=1e-6, abs=1e-6)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**40), M=st.integers(1, 5), mode=st.sampled_from(["grover", "threshold", "max"]))
def test_seed_determines_output(seed, M, mode):
    cfg = dict(kind="search", n=2, M=M, mode=mode, trials=4, seed=seed)
    assert run_experiment(ExperimentConfig(**cfg)).to_csv() == run_experiment(ExperimentConfig(**cfg)).to_csv()


def test_lemma_verify_report_holds():
    rep = run_experiment(ExperimentConfig(kind="lemma-verify", seed=0))
    assert [r["lemma"] for r in rep.records] == ["classical-interaction-invariance", "classical-equivalent-any-tester",
                                                  "classical-tester-equivalent", "classicalization"]
    assert all(r["holds"] for r in rep.records)
    assert json.loads(rep.to_json())["aggregates"]["holds"]["mean"] == 1.0


def test_structural_pair_records_are_rewarded():
    rep = run_experiment(ExperimentConfig(kind="structural-pair", M=2, trials=30, seed=1))
    assert all(r["rewarded"] and r["success"] for r in rep.records)
    assert rep.records[0]["gamma_sq"] == pytest.approx(0.25)


@pytest.mark.parametrize("cfg", [
    dict(kind="search", M=20),
    dict(kind="learn-compare", n=4, M=8),
    dict(kind="stochastic-search", M=10, bits=6),
    dict(kind="structural-pair", M=5),
    dict(kind="nonsense"),
    dict(kind="search", mode="bogus"),
    dict(kind="learn-compare", M=3, T_eval=4),
    dict(kind="learn-compare", epsilon=1.5),
    dict(kind="search", trials=0),
])
def test_resource_and_range_guards(cfg):
    with pytest.raises(ValidationError):
        ExperimentConfig(**cfg).validate()
    with pytest.raises(ValidationError):
        run_experiment(ExperimentConfig(**cfg))


def test_trial_errors_carry_index(tmp_path):
    data = generate_fixture({"kind": "multi-reward", "n": 2, "M": 2, "rewards": [1, 0, 0, 1]}, rng())
    path = write_fixture(data, tmp_path / "multi.json")
    with pytest.raises(TrialError) as info:
        run_experiment(ExperimentConfig(kind="learn-compare", fixture=str(path), trials=3))
    assert info.value.trial == 0 and isinstance(info.value.__cause__, ValidationError)


def test_config_from_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('kind = "search"\nM = 3\ntrials = 7\nseed = 5\n[fixture_params]\nwinner = 2\n')
    cfg = ExperimentConfig.from_toml(path, {"trials": 2, "seed": None})
    assert (cfg.M, cfg.trials, cfg.seed, cfg.fixture_params) == (3, 2, 5, {"winner": 2})
    rep = run_experiment(cfg)
    assert rep.fixture["metadata"]["winner"] == 2
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict({"kind": "search", "colour": "red"})
