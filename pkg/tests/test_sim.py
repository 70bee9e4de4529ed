import csv
import math

import numpy as np
import pytest

from affinityq.load import load_policy, load_rerouting_multi, load_zero_redundancy
from affinityq.model import (INF, AssignmentMatrix, JobType, KnownSizesRule, PolicySpec, Scenario, ScenarioError,
                             SizeModel, ThresholdMatrix, ThresholdVector, effective_assignment, two_type)
from affinityq.sim import InvariantViolation, SimConfig, SimReport, estimate_lambda_max, run

from conftest import size_model


def _close(rep, rho, slack=0.01):
    # batch-means CI plus a small allowance for the warmup bias
    for i in (0, 1):
        assert abs(rep.utilization[i] - rho[i]) <= 3 * rep.utilization_ci[i] + slack, (i, rep.utilization, rho)


def test_mm1_latency_and_utilization():
    sc = Scenario((1, 1), (JobType(1.0, (1.0, 1.0)),), SizeModel.exponential(1.0))
    pol = PolicySpec.zero(AssignmentMatrix.from_pool1([1.0]))
    rep = run(SimConfig(sc, pol, 0.5, horizon=200_000, seed=3))
    assert rep.utilization[0] == pytest.approx(0.5, abs=3 * rep.utilization_ci[0] + 0.005)
    assert rep.utilization[1] == 0.0
    assert abs(rep.mean_latency - 2.0) <= 3 * rep.latency_ci + 0.02
    assert not rep.unstable and rep.reroute_count == rep.replicate_count == 0


def test_zero_redundancy_utilization(base):
    A = effective_assignment(base, 0.5)
    rep = run(SimConfig(base, PolicySpec.zero(A), 0.15, horizon=100_000, seed=1))
    rho = load_zero_redundancy(base, A, 0.15).rho
    assert rho == pytest.approx((0.825, 0.825))
    _close(rep, rho)


def test_full_redundancy_identical_pools_never_wait(base):
    rep = run(SimConfig(base, PolicySpec.full(effective_assignment(base, 0.5)), 0.4, horizon=50_000, seed=2,
                        check_invariants=True))
    assert rep.wait_after_replication_count == 0
    assert rep.replicate_count == rep.arrivals
    _close(rep, (0.8, 0.8))


def test_unequal_pools_make_replicas_wait():
    # counted are jobs that leave service at their threshold and find the smaller pool full of replicas
    sc = two_type(0.5, pools=(4, 2))
    pol = PolicySpec("replication", effective_assignment(sc, 0.5), ThresholdVector((2.0, 2.0)))
    rep = run(SimConfig(sc, pol, 0.15, horizon=50_000, seed=4, check_invariants=True))
    assert rep.wait_after_replication_count > 0


def test_deterministic_given_seed_and_run_index(base):
    pol = PolicySpec("replication", effective_assignment(base, 0.4), ThresholdVector((5.0, 15.0)))
    a = run(SimConfig(base, pol, 0.2, horizon=20_000, seed=7))
    b = run(SimConfig(base, pol, 0.2, horizon=20_000, seed=7))
    c = run(SimConfig(base, pol, 0.2, horizon=20_000, seed=7, run_index=1))
    assert a.as_dict() == b.as_dict()
    assert a.mean_latency != c.mean_latency


@pytest.mark.parametrize("kind,tau,carry", [("rerouting", (5.0, 20.0), False), ("rerouting", (0.0, 8.0), True),
                                            ("replication", (3.0, 0.0), False), ("replication", (10.0, 10.0), True)])
def test_invariants_hold(base, kind, tau, carry):
    sc = two_type(0.1, pools=(3, 2))
    pol = PolicySpec(kind, effective_assignment(sc, 0.4), ThresholdVector(tau), carry_over=carry)
    rep = run(SimConfig(sc, pol, 0.05, horizon=20_000, seed=5, check_invariants=True))
    assert rep.completed > 0
    assert (rep.reroute_count if kind == "rerouting" else rep.replicate_count) > 0


def test_trace_file(tmp_path, base):
    path = tmp_path / "trace.csv"
    pol = PolicySpec("rerouting", effective_assignment(base, 0.5), ThresholdVector((5.0, 5.0)))
    rep = run(SimConfig(base, pol, 0.1, horizon=2_000, seed=0, trace_path=str(path)))
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert set(rows[0]) == {"time", "job", "event", "pool"}
    times = [float(r["time"]) for r in rows]
    assert times == sorted(times)
    events = {r["event"] for r in rows}
    assert {"arrival", "start", "complete", "reroute"} <= events
    assert sum(r["event"] == "arrival" for r in rows) == rep.arrivals
    assert sum(r["event"] == "reroute" for r in rows) == rep.reroute_count


def test_config_errors(base):
    pol = PolicySpec.zero(effective_assignment(base, 0.5))
    for kw in ({"lam": 0.0}, {"horizon": 10}, {"warmup_fraction": 0.9}, {"batches": 1}):
        args = {"lam": 0.1, **kw}
        with pytest.raises(ScenarioError):
            run(SimConfig(base, pol, **args))
    bad = PolicySpec("rerouting", effective_assignment(base, 0.5), ThresholdVector((-1.0, 1.0)))
    with pytest.raises(ScenarioError):
        run(SimConfig(base, bad, 0.1))
    iid = two_type(0.1, size_model=SizeModel.exponential(10.0, "iid"))
    with pytest.raises(ScenarioError):
        run(SimConfig(iid, PolicySpec("replication", effective_assignment(iid, 0.5), ThresholdVector((1.0, 1.0)),
                                      carry_over=True), 0.1))


def test_report_json_roundtrip(base):
    import json
    rep = run(SimConfig(base, PolicySpec.zero(effective_assignment(base, 0.5)), 0.1, horizon=2_000))
    d = json.loads(rep.to_json())
    assert d["unstable"] is False and d["arrivals"] == 2_000
    assert isinstance(rep, SimReport)


def test_overload_is_flagged(base):
    rep = run(SimConfig(base, PolicySpec.zero(effective_assignment(base, 0.5)), 0.25, horizon=20_000, seed=1))
    assert rep.unstable


@pytest.mark.slow
@pytest.mark.parametrize("family,corr", [("exponential", "identical"), ("exponential", "iid"), ("deterministic", "identical"),
                                         ("pareto", "identical"), ("pareto", "iid")])
@pytest.mark.parametrize("kind,tau", [("rerouting", (5.0, 20.0)), ("replication", (2.0, 10.0))])
def test_utilization_matches_load(family, corr, kind, tau):
    sm = size_model(family, corr, index=3.0)
    sc = two_type(0.3, pools=(3, 3), size_model=sm)
    pol = PolicySpec(kind, effective_assignment(sc, 0.35), ThresholdVector(tau))
    lr = load_policy(sc, pol)
    lam = 0.6 * lr.lambda_max
    rep = run(SimConfig(sc, pol, lam, horizon=150_000, seed=11))
    _close(rep, lr.at(lam).rho)


@pytest.mark.slow
def test_carry_over_utilization():
    sc = two_type(0.2, pools=(2, 2), size_model=SizeModel.exponential(10.0))
    for kind in ("rerouting", "replication"):
        pol = PolicySpec(kind, effective_assignment(sc, 0.5), ThresholdVector((8.0, 4.0)), carry_over=True)
        lr = load_policy(sc, pol)
        lam = 0.6 * lr.lambda_max
        _close(run(SimConfig(sc, pol, lam, horizon=150_000, seed=12)), lr.at(lam).rho)


@pytest.mark.slow
def test_multi_threshold_utilization():
    sc = two_type(0.1, pools=(1, 1), size_model=SizeModel.exponential(1.0))
    A = effective_assignment(sc, 0.5)
    T = ((8.0, 3.0, 5.0), (6.0, 1.0, 2.0))
    pol = PolicySpec("rerouting", A, ThresholdMatrix(T))
    lam = 0.2
    rho = load_rerouting_multi(sc, A, T, lam, cumulative=True).rho
    _close(run(SimConfig(sc, pol, lam, horizon=300_000, seed=13)), rho)


@pytest.mark.slow
def test_known_sizes_utilization():
    sc = two_type(0.2, pools=(2, 2), size_model=SizeModel.pareto(index=3.5))
    for rule in ("rational", "rational_floor", "best"):
        pol = PolicySpec("rerouting", effective_assignment(sc, 0.5), ThresholdVector((2.0, 6.0)),
                         known_sizes_rule=KnownSizesRule(rule))
        lr = load_policy(sc, pol)
        lam = 0.6 * lr.lambda_max
        _close(run(SimConfig(sc, pol, lam, horizon=150_000, seed=14)), lr.at(lam).rho)


@pytest.mark.slow
@pytest.mark.parametrize("which", ["zero", "full", "known"])
def test_lambda_max_estimate(base, which):
    if which == "zero":
        pol = PolicySpec.zero(effective_assignment(base, 0.5))
    elif which == "full":
        pol = PolicySpec.full(effective_assignment(base, 0.5))
    else:
        pol = PolicySpec.zero(effective_assignment(base, (1.0, 0.0), "known"))
    exact = load_policy(base, pol).lambda_max
    est, probes = estimate_lambda_max(SimConfig(base, pol, 0.5 * exact, horizon=100_000, seed=21),
                                      resolution=0.01)
    assert est == pytest.approx(exact, rel=0.05)
    assert len(probes) >= 3
