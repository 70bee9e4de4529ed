import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affinityq.latency import (InfiniteMomentError, UnstableError, latency_policy, latency_replication,
                               latency_rerouting, optimize_latency)
from affinityq.model import (INF, AssignmentMatrix, JobType, PolicySpec, Scenario, ScenarioError, SizeModel,
                             ThresholdVector, effective_assignment, two_type)


def _fig6(sizes="exponential"):
    sm = SizeModel.exponential(1.0) if sizes == "exponential" else SizeModel.deterministic(1.0)
    return two_type(0.1, pools=(1, 1), size_model=sm)


def test_mm1():
    sc = Scenario((1, 1), (JobType(1.0, (1.0, 1.0)),), SizeModel.exponential(1.0))
    A = AssignmentMatrix.from_pool1([1.0])
    rep = latency_rerouting(sc, A, (INF, INF), 0.5)
    assert rep.overall == pytest.approx(2.0, rel=1e-12)
    assert rep.per_pool[0] == pytest.approx(2.0)
    assert rep.rho == (0.5, 0.0)


def test_md1_full_redundancy():
    # full replication with identical unit sizes behaves as M/D/1 with unit service
    sc = _fig6("deterministic")
    rep = latency_replication(sc, effective_assignment(sc, 0.5), (0.0, 0.0), 0.4)
    assert rep.overall == pytest.approx(1.0 + 0.4 / (2 * 0.6), rel=1e-12)


@pytest.mark.parametrize("sizes", ["exponential", "deterministic"])
def test_policies_coincide_without_redundancy(sizes):
    sc = _fig6(sizes)
    A = effective_assignment(sc, 0.3)
    a = latency_rerouting(sc, A, (INF, INF), 0.2)
    b = latency_replication(sc, A, (INF, INF), 0.2)
    assert a.per_pool == pytest.approx(b.per_pool, rel=1e-12)
    assert a.overall == pytest.approx(b.overall, rel=1e-12)


def test_zero_load_limit_is_the_service_part():
    sc = _fig6()
    A = effective_assignment(sc, 0.5)
    for f, tau in ((latency_rerouting, (INF, INF)), (latency_rerouting, (2.0, 2.0)), (latency_replication, (1.0, 1.0))):
        rep = f(sc, A, tau, 1e-9)
        assert rep.per_pool == pytest.approx(rep.service, rel=1e-6)
    # no redundancy: E[X/r] averaged over the type mix = 0.5 (1 + 10)
    assert latency_rerouting(sc, A, (INF, INF), 1e-9).overall == pytest.approx(5.5, rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.one_of(st.floats(0.0, 20.0), st.just(INF)), st.one_of(st.floats(0.0, 20.0), st.just(INF)),
       st.sampled_from(["rerouting", "replication"]), st.booleans())
def test_overall_is_the_start_mixture(q, t1, t2, kind, conditioned):
    sc = _fig6()
    A = effective_assignment(sc, q)
    f = latency_rerouting if kind == "rerouting" else latency_replication
    try:
        rep = f(sc, A, (t1, t2), 0.05, conditioned)
    except (UnstableError, InfiniteMomentError):
        return
    start = rep.start_probability
    assert sum(start) == pytest.approx(1.0)
    assert rep.overall == pytest.approx(sum(s * t for s, t in zip(start, rep.per_pool) if s > 0), rel=1e-12)
    assert all(v >= 0 for v in rep.per_pool + rep.waiting + rep.service)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 20.0), st.floats(0.01, 0.3), st.floats(0.01, 0.3),
       st.sampled_from(["rerouting", "replication"]))
def test_latency_grows_with_load(q, tau, l1, l2, kind):
    sc = _fig6()
    A = effective_assignment(sc, q)
    f = latency_rerouting if kind == "rerouting" else latency_replication
    lo, hi = sorted((l1, l2))
    try:
        b = f(sc, A, (tau, tau), hi)
    except UnstableError:
        return
    a = f(sc, A, (tau, tau), lo)
    assert all(x <= y + 1e-12 for x, y in zip(a.per_pool, b.per_pool))


def test_conditioned_mix_matches_printed_form_for_blind_assignment():
    sc = _fig6()
    A = effective_assignment(sc, 0.3)
    for f in (latency_rerouting, latency_replication):
        assert f(sc, A, (1.0, 2.0), 0.1).overall == pytest.approx(f(sc, A, (1.0, 2.0), 0.1, True).overall)


def test_conditioned_mix_gives_exact_mg1_for_known_types():
    sc = _fig6("deterministic")
    A = effective_assignment(sc, (1.0, 0.0), "known")
    rep = latency_rerouting(sc, A, (INF, INF), 0.2, conditioned=True)
    # each pool: M/D/1 with rate 0.1 and unit service
    assert rep.overall == pytest.approx(1.0 + 0.1 / (2 * 0.9), rel=1e-12)


def test_errors():
    sc = _fig6()
    A = effective_assignment(sc, 0.5)
    with pytest.raises(UnstableError):
        latency_rerouting(sc, A, (INF, INF), 0.5)
    heavy = two_type(0.1, pools=(1, 1), size_model=SizeModel.pareto(index=1.8))
    with pytest.raises(InfiniteMomentError):
        latency_rerouting(heavy, effective_assignment(heavy, 0.5), (INF, INF), 0.01)
    with pytest.raises(ScenarioError):
        latency_rerouting(two_type(0.1), A, (INF, INF), 0.01)
    with pytest.raises(ScenarioError):
        latency_policy(sc, PolicySpec("rerouting", A, ThresholdVector((1.0, 1.0)), carry_over=True), 0.1)


def test_optimized_replication_is_full_redundancy_at_moderate_load():
    sc = _fig6()
    A = effective_assignment(sc, 0.5)
    for lam in (0.1, 0.3):
        res = optimize_latency(sc, "replication", lam)
        assert res.best_value == pytest.approx(latency_replication(sc, A, (0.0, 0.0), lam).overall, rel=1e-9)
    # never worse than full replication, which is in the search space
    res = optimize_latency(sc, "replication", 0.5)
    assert res.best_value <= latency_replication(sc, A, (0.0, 0.0), 0.5).overall


def test_replicating_at_arrival_beats_unit_threshold_for_unit_sizes():
    sc = _fig6("deterministic")
    A = effective_assignment(sc, 0.5)
    for lam in (0.2, 0.5, 0.8):
        res = optimize_latency(sc, "replication", lam)
        assert res.best_value < latency_replication(sc, A, (1.0, 1.0), lam).overall
        assert latency_replication(sc, A, (0.0, 0.0), lam).overall < latency_replication(sc, A, (1.0, 1.0), lam).overall


def test_optimizer_skips_unstable_cells():
    sc = _fig6()
    res = optimize_latency(sc, "rerouting", 0.5)
    assert math.isfinite(res.best_value) and res.objective == "latency"
    with pytest.raises(UnstableError):
        optimize_latency(sc, "zero", 0.9)
    # near zero load only the service time matters
    res = optimize_latency(sc, "replication", 1e-6)
    assert res.best_value == pytest.approx(1.0, rel=1e-4)
