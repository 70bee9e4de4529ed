import math

import numpy as np
import pytest

from affinityq.load import load_full_redundancy, load_policy, load_zero_redundancy
from affinityq.model import INF, ConfusionMatrix, ScenarioError, SizeModel, effective_assignment, two_type
from affinityq.stability import (GridSpec, SweepTable, apply_axis, optimize_stability, read_csv, scenario_hash,
                                 sweep)

COARSE = GridSpec(q_step=0.1, tau_points=10, refine_passes=2, weight_step=0.1)


def test_grid_has_both_extremes():
    t = GridSpec().tau_values(10.0)
    assert t[0] == 0.0 and math.isinf(t[-1]) and len(t) == 26
    assert t[1] == pytest.approx(0.1) and t[-2] == pytest.approx(100.0)
    assert GridSpec().q_values()[[0, -1]].tolist() == [0.0, 1.0]


def test_known_types_send_each_type_to_its_fast_pool(base):
    res = optimize_stability(base, "zero", "known")
    assert res.best_value == pytest.approx(1.0, rel=1e-12)
    assert res.best_policy.assignment.q == (1.0, 0.0)


def test_replication_matches_full_redundancy_for_unbalanced_speeds(base):
    rep = optimize_stability(base, "replication")
    assert rep.best_value == pytest.approx(0.5, abs=1e-4)
    assert rep.best_value > optimize_stability(base, "rerouting").best_value


@pytest.mark.parametrize("r", [0.5, 0.8, 1.0])
def test_thresholds_do_not_help_for_balanced_speeds(r):
    sc = two_type(r)
    zero = 2 * r / (1 + r)
    for fam in ("rerouting", "replication", "zero"):
        res = optimize_stability(sc, fam)
        assert res.best_value == pytest.approx(zero, abs=1e-3)
    assert optimize_stability(sc, "rerouting").best_policy.tau == (INF, INF)


@pytest.mark.parametrize("r,corr", [(0.1, "iid"), (0.3, "identical"), (0.7, "iid")])
def test_replication_dominates_both_extremes(r, corr):
    sc = two_type(r, size_model=SizeModel.exponential(10.0, corr))
    rep = optimize_stability(sc, "replication", grid=COARSE).best_value
    zero = optimize_stability(sc, "zero", grid=COARSE).best_value
    full = load_full_redundancy(sc).lambda_max
    assert rep >= max(zero, full) - 1e-12


def test_refinement_never_decreases():
    sc = two_type(0.3, size_model=SizeModel.exponential(10.0, "iid"))
    for fam in ("rerouting", "replication", "zero"):
        raw = optimize_stability(sc, fam, grid=GridSpec(refine_passes=0)).best_value
        refined = optimize_stability(sc, fam, grid=GridSpec(refine_passes=3)).best_value
        assert refined >= raw - 1e-15


def test_extreme_families_ignore_the_threshold_grid(base):
    for fam in ("zero", "full"):
        a = optimize_stability(base, fam, grid=GridSpec(tau_points=3)).best_value
        b = optimize_stability(base, fam, grid=GridSpec(tau_points=40)).best_value
        assert a == b


def test_optimizer_is_deterministic():
    sc = two_type(0.2, size_model=SizeModel.exponential(10.0, "iid"))
    a = optimize_stability(sc, "rerouting", grid=COARSE)
    b = optimize_stability(sc, "rerouting", grid=COARSE)
    assert a.best_value == b.best_value and a.best_policy == b.best_policy


def test_reported_value_is_the_policy_load(base):
    res = optimize_stability(base, "rerouting")
    assert res.best_value == load_policy(base, res.best_policy).lambda_max


def test_known_sizes_beats_unknown_sizes(base):
    ks = optimize_stability(base, "known_sizes_rerouting", grid=COARSE).best_value
    assert ks >= optimize_stability(base, "rerouting", grid=COARSE).best_value - 1e-12
    # rerouting at the first completion time: E[B] = 7.5 per pool
    assert ks == pytest.approx(5 / 7.5, rel=1e-9)


def test_trace_is_kept_on_request(base):
    res = optimize_stability(base, "rerouting", grid=GridSpec(q_step=0.25, tau_points=4, keep_trace=True))
    assert len(res.grid_trace) >= 5 * 6 * 6  # full grid plus refinement steps
    assert max(v for _, v in res.grid_trace) <= res.best_value + 1e-12


def test_partly_known_needs_confusion(base):
    with pytest.raises(ScenarioError):
        optimize_stability(base, "rerouting", "partly_known")
    with pytest.raises(ScenarioError):
        optimize_stability(base, "bogus")


def test_apply_axis(base):
    assert apply_axis(base, "r_slow", 0.4).speeds.tolist() == [[1.0, 0.4], [0.4, 1.0]]
    assert apply_axis(base, "p_1", 0.3).probabilities.tolist() == pytest.approx([0.3, 0.7])
    assert apply_axis(base, "p_confusion", 0.8).confusion == ConfusionMatrix.symmetric(0.8)
    with pytest.raises(ScenarioError):
        apply_axis(base, "n", 1)


def test_sweep_zero_column_closed_form(base):
    vals = [0.1, 0.3, 0.6, 1.0]
    table = sweep(base, "r_slow", vals, ["ZRed", "FRed"])
    assert table.columns["ZRed"] == pytest.approx([2 * r / (1 + r) for r in vals], rel=1e-12)
    assert table.columns["FRed"] == pytest.approx([0.5] * 4)
    with pytest.raises(ScenarioError, match="sorted"):
        sweep(base, "r_slow", [0.5, 0.1], ["ZRed"])


def test_information_never_hurts():
    sc = two_type(0.1, p_correct=0.5)
    vals = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    table = sweep(sc, "p_confusion", vals, ["Rep", "Rer", "ZRed"], grid=COARSE)
    for col in table.columns.values():
        assert all(b >= a - 1e-9 for a, b in zip(col, col[1:]))
    # fully informative labels give the known-types bound
    assert table.columns["ZRed"][-1] == pytest.approx(1.0)


def test_csv_roundtrip(tmp_path, base):
    table = sweep(base, "r_slow", [0.2, 0.4], ["ZRed", "FRed"], metadata={"note": "x"})
    path = tmp_path / "t.csv"
    text = table.to_csv(path)
    assert text.startswith("# scenario_hash: " + scenario_hash(base))
    assert "r_slow,ZRed,FRed" in text
    back = read_csv(path)
    assert back.values == table.values and back.columns == table.columns
    assert back.metadata["note"] == "x"
    inf_table = SweepTable("x", [1.0], {"a": [INF]})
    assert inf_table.to_csv().strip().endswith("1.0,inf")


def test_scenario_hash_changes_with_the_scenario(base):
    assert scenario_hash(base) == scenario_hash(two_type(0.1))
    assert scenario_hash(base) != scenario_hash(two_type(0.2))
