import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from affinityq import oracle
from affinityq.load import (KnownSizesModel, LoadReport, load_full_redundancy, load_known_sizes, load_policy,
                            load_replication, load_rerouting, load_rerouting_multi, load_zero_redundancy)
from affinityq.model import (INF, KnownSizesRule, PolicySpec, ScenarioError, SizeModel, ThresholdMatrix,
                             ThresholdVector, effective_assignment, two_type)

from conftest import size_model


def _sc(r_slow=0.1, family="exponential", corr="identical", pools=(5, 5)):
    return two_type(r_slow, pools=pools, size_model=size_model(family, corr))


@pytest.mark.parametrize("r", [0.1, 0.6, 1.0])
def test_zero_redundancy_closed_form(r):
    sc = _sc(r)
    rep = load_zero_redundancy(sc, effective_assignment(sc, 0.5))
    # each pool gets half of each type, one type at speed r: E[B] = 2.5 (1 + 1/r)
    assert rep.expected_B == pytest.approx((2.5 * (1 + 1 / r),) * 2)
    assert rep.lambda_max == pytest.approx(2 * r / (1 + r), rel=1e-12)


def test_known_types_bound_is_one():
    sc = _sc(0.1)
    rep = load_zero_redundancy(sc, effective_assignment(sc, (1.0, 0.0), "known"))
    assert rep.lambda_max == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("family", ["exponential", "pareto", "deterministic"])
def test_full_redundancy_identical_is_insensitive(family):
    for r in (0.1, 0.5):
        assert load_full_redundancy(_sc(r, family)).lambda_max == pytest.approx(0.5, rel=1e-9)


@pytest.mark.parametrize("r", [0.1, 0.3, 0.8])
def test_full_redundancy_iid_exponential(r):
    assert load_full_redundancy(_sc(r, corr="iid")).lambda_max == pytest.approx((1 + r) / 2, rel=1e-9)


def test_report_arithmetic():
    rep = LoadReport((20.0, 10.0), (5, 5))
    assert rep.lambda_max == 0.25
    assert rep.rho is None
    assert rep.at(0.1).rho == pytest.approx((0.4, 0.2))
    assert LoadReport((0.0, 0.0), (1, 1)).lambda_max == INF
    assert rep.at(0.1).as_dict()["rho"] == pytest.approx([0.4, 0.2])


scenarios = st.builds(
    lambda fam, corr, r, p1, q: (_sc(r, fam, corr), q), st.sampled_from(["exponential", "pareto", "deterministic"]),
    st.sampled_from(["identical", "iid"]), st.floats(0.05, 1.0), st.floats(0.1, 0.9), st.floats(0.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(scenarios)
def test_policy_extremes_coincide(case):
    sc, q = case
    A = effective_assignment(sc, q)
    zero = load_zero_redundancy(sc, A).expected_B
    assert load_rerouting(sc, A, (INF, INF)).expected_B == pytest.approx(zero, rel=1e-12)
    assert load_replication(sc, A, (INF, INF)).expected_B == pytest.approx(zero, rel=1e-12)
    assert load_replication(sc, A, (0.0, 0.0)).expected_B == pytest.approx(
        load_full_redundancy(sc).expected_B, rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(scenarios, st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_rerouting_at_zero_swaps_the_assignment(case, t1, t2):
    # tau = 0 on pool 1 sends every pool-1 job to pool 2 untouched
    sc, q = case
    A = effective_assignment(sc, q)
    swapped = load_zero_redundancy(sc, effective_assignment(sc, 0.0)).expected_B
    assert load_rerouting(sc, A, (0.0, INF)).expected_B == pytest.approx(
        load_rerouting(sc, effective_assignment(sc, 0.0), (INF, INF)).expected_B, rel=1e-12)
    assert load_rerouting(sc, A, (0.0, INF)).expected_B == pytest.approx(swapped, rel=1e-12)


def test_carry_over_at_zero_matches_plain_rerouting():
    sc = _sc(0.3)
    A = effective_assignment(sc, 0.4)
    for tau in [(0.0, 0.0), (INF, INF), (0.0, INF)]:
        assert load_rerouting(sc, A, tau, carry_over=True).expected_B == pytest.approx(
            load_rerouting(sc, A, tau).expected_B, rel=1e-12)
        assert load_replication(sc, A, tau, carry_over=True).expected_B == pytest.approx(
            load_replication(sc, A, tau).expected_B, rel=1e-12)


def test_carry_over_saves_work():
    sc = _sc(0.3)
    A = effective_assignment(sc, 0.4)
    plain = load_rerouting(sc, A, (5.0, 20.0)).expected_B
    carry = load_rerouting(sc, A, (5.0, 20.0), carry_over=True).expected_B
    assert all(c <= p for c, p in zip(carry, plain))


def _mc_rerouting(sc, a, tau, n=400_000, seed=0):
    """Work per arrival at each pool from raw draws."""
    rng = np.random.default_rng(seed)
    p, r = sc.probabilities, sc.speeds
    j = rng.choice(len(p), size=n, p=p)
    s = np.where(rng.random(n) < a[0][j], 0, 1)
    x1, x2 = sc.size_model.sample_pair(rng, n)
    xs = np.stack([x1, x2])
    own = xs[s, np.arange(n)] / r[s, j]
    oth = xs[1 - s, np.arange(n)] / r[1 - s, j]
    t = np.asarray(tau)[s]
    over = own > t
    out = []
    for i in (0, 1):
        w = np.where(s == i, np.minimum(own, t), 0.0) + np.where((s != i) & over, oth, 0.0)
        out.append((w.mean(), w.std(ddof=1) / math.sqrt(n)))
    return out


@pytest.mark.parametrize("corr", ["identical", "iid"])
def test_rerouting_load_matches_raw_draws(corr):
    sc = _sc(0.3, corr=corr)
    A = effective_assignment(sc, 0.35)
    tau = (4.0, 15.0)
    exact = load_rerouting(sc, A, tau).expected_B
    for b, (m, se) in zip(exact, _mc_rerouting(sc, A.array, tau)):
        assert abs(b - m) <= 4 * se


def test_multi_threshold_single_stage_is_rerouting():
    rng = np.random.default_rng(3)
    for _ in range(10):
        sc = _sc(float(rng.uniform(0.05, 1)), rng.choice(["exponential", "pareto", "deterministic"]),
                 rng.choice(["identical", "iid"]))
        A = effective_assignment(sc, float(rng.uniform()))
        t = tuple(float(v) for v in rng.uniform(0, 40, 2))
        multi = load_rerouting_multi(sc, A, ((t[0],), (t[1],))).expected_B
        assert multi == pytest.approx(load_rerouting(sc, A, t).expected_B, rel=1e-9)


def test_multi_threshold_forms_agree_on_monotone_rows():
    sc = _sc(0.3)
    A = effective_assignment(sc, 0.4)
    T = ((5.0, 8.0, 30.0), (2.0, 4.0, 9.0))
    assert load_rerouting_multi(sc, A, T).expected_B == pytest.approx(
        load_rerouting_multi(sc, A, T, cumulative=True).expected_B, rel=1e-12)


def test_multi_threshold_cumulative_matches_raw_draws():
    # the first pool-1 limit exceeds the second, so only the running-maximum form is exact
    sc = _sc(0.3)
    A = effective_assignment(sc, 0.4)
    T = ((8.0, 3.0, 5.0), (6.0, 1.0, 2.0))
    rng = np.random.default_rng(9)
    n = 400_000
    p, r = sc.probabilities, sc.speeds
    j = rng.choice(2, size=n, p=p)
    s = np.where(rng.random(n) < A.array[0][j], 0, 1)
    x = sc.size_model.sample(rng, n)
    work = np.zeros((2, n))
    alive = np.ones(n, bool)
    for m in range(4):
        pool = np.where(m % 2 == 0, s, 1 - s)
        t = x / r[pool, j]
        lim = np.array([T[si][m] if m < 3 else INF for si in s])
        spent = np.minimum(t, lim)
        for i in (0, 1):
            work[i] += np.where(alive & (pool == i), spent, 0.0)
        alive &= t > lim
    exact = load_rerouting_multi(sc, A, T, cumulative=True).expected_B
    for i in (0, 1):
        m, se = work[i].mean(), work[i].std(ddof=1) / math.sqrt(n)
        assert abs(exact[i] - m) <= 4 * se


@pytest.mark.parametrize("family", ["exponential", "pareto", "deterministic"])
@pytest.mark.parametrize("corr", ["identical", "iid"])
@pytest.mark.parametrize("kind", ["rerouting", "replication"])
def test_constant_known_sizes_rule_reduces_to_unknown_sizes(family, corr, kind):
    sc = _sc(0.3, family, corr)
    A = effective_assignment(sc, 0.4)
    tau = (4.0, 15.0)
    pol = PolicySpec(kind, A, ThresholdVector(tau), known_sizes_rule=KnownSizesRule("constant"))
    ref = (load_rerouting if kind == "rerouting" else load_replication)(sc, A, tau).expected_B
    assert load_known_sizes(sc, pol).expected_B == pytest.approx(ref, rel=1e-7)


@pytest.mark.parametrize("rule", ["rational", "rational_floor", "best"])
@pytest.mark.parametrize("family,corr", [("exponential", "identical"), ("exponential", "iid"),
                                         ("pareto", "identical")])
def test_known_sizes_loads_match_raw_draws(rule, family, corr):
    # finite-variance sizes so the sample mean is a usable oracle
    sc = two_type(0.3, size_model=size_model(family, corr, index=3.5 if family == "pareto" else None))
    A = effective_assignment(sc, 0.4)
    pol = PolicySpec("replication", A, ThresholdVector((1.0, 3.0)), known_sizes_rule=KnownSizesRule(rule))
    model = KnownSizesModel(sc, pol)
    exact = load_known_sizes(sc, pol).expected_B
    rng = np.random.default_rng(2)
    x1, x2 = sc.size_model.sample_pair(rng, 20_000)
    vals = np.array([model.pointwise(a, b)[0] for a, b in zip(x1, x2)])
    for i in (0, 1):
        m, se = vals[:, i].mean(), vals[:, i].std(ddof=1) / math.sqrt(len(vals))
        assert abs(exact[i] - m) <= 4.5 * se


def test_rational_rule_identical_loads():
    # with identical replicas the rational threshold is x * min_j 1/r_sj: every job reroutes at r=1 time
    sc = _sc(0.1)
    A = effective_assignment(sc, 0.5)
    for kind, expected in (("rerouting", 7.5), ("replication", 10.0)):
        pol = PolicySpec(kind, A, ThresholdVector((1.0, 1.0)), known_sizes_rule=KnownSizesRule("rational"))
        assert load_known_sizes(sc, pol).expected_B == pytest.approx((expected, expected), rel=1e-12)


def test_known_sizes_rejects_carry_over_and_matrices():
    sc = _sc(0.1)
    A = effective_assignment(sc, 0.5)
    with pytest.raises(ScenarioError):
        KnownSizesModel(sc, PolicySpec("rerouting", A, ThresholdVector((1.0, 1.0)), carry_over=True,
                                       known_sizes_rule=KnownSizesRule("best")))
    with pytest.raises(ScenarioError):
        KnownSizesModel(sc, PolicySpec("rerouting", A, ThresholdMatrix(((1.0,), (1.0,))),
                                       known_sizes_rule=KnownSizesRule("best")))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 60.0), st.floats(0.0, 60.0), st.floats(0.0, 1.0), st.floats(0.05, 0.9))
def test_rounding_down_to_rational_points_never_hurts(t1, t2, q, r):
    sc = _sc(r)
    A = effective_assignment(sc, q)
    const = load_rerouting(sc, A, (t1, t2)).expected_B
    pol = PolicySpec("rerouting", A, ThresholdVector((t1, t2)), known_sizes_rule=KnownSizesRule("rational_floor"))
    floor = load_known_sizes(sc, pol).expected_B
    assert all(f <= c + 1e-6 for f, c in zip(floor, const))


def test_load_policy_dispatch(base):
    A = effective_assignment(base, 0.5)
    assert load_policy(base, PolicySpec.zero(A)).lambda_max == pytest.approx(2 * 0.1 / 1.1)
    assert load_policy(base, PolicySpec.full(A)).lambda_max == pytest.approx(0.5)
    pol = PolicySpec("rerouting", A, ThresholdMatrix(((3.0,), (4.0,))))
    assert load_policy(base, pol).expected_B == pytest.approx(load_rerouting(base, A, (3.0, 4.0)).expected_B)
    assert load_policy(base, PolicySpec("replication", A, ThresholdVector((2.0, 2.0))), lam=0.1).rho is not None
