"""Mean latency approximations for single-server pools.

Each pool is treated as an M/G/1 queue: the stream of rerouted or
replicated jobs is taken to be Poisson, which makes the
Pollaczek-Khinchine mean wait available per pool.  With no redundancy at all
(tau = inf) and with full replication at arrival (tau = 0) that assumption
holds exactly.

The per-pool formulas average the service part and the rerouting
probability over the unconditional type mix ``p_j``.  ``conditioned=True``
uses the mix of the jobs actually started on pool i instead
(``p_j alpha_ij / sum_k p_k alpha_ik``); the two coincide whenever the
assignment does not depend on the type.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .functionals import Functionals
from .load import load_replication, load_rerouting, _alpha, _tau
from .model import INF, PolicySpec, Scenario, ScenarioError, ThresholdVector, effective_assignment


class UnstableError(ArithmeticError):
    """Some pool has effective load >= 1."""


class InfiniteMomentError(ArithmeticError):
    """The second moment of a pool's service requirement diverges."""


@dataclass(frozen=True)
class LatencyReport:
    per_pool: tuple[float, float]
    overall: float
    waiting: tuple[float, float]
    service: tuple[float, float]
    rho: tuple[float, float]
    second_moment: tuple[float, float]
    start_probability: tuple[float, float] = (0.5, 0.5)

    @property
    def stability_flags(self):
        return tuple(r < 1 for r in self.rho)

    def as_dict(self):
        return {"per_pool": list(self.per_pool), "overall": self.overall, "waiting": list(self.waiting),
                "service": list(self.service), "rho": list(self.rho),
                "second_moment": list(self.second_moment)}


def _check_pools(scenario):
    if tuple(scenario.pool_sizes) != (1, 1):
        raise ScenarioError("latency approximations assume one server per pool")


def _pk_wait(lam, b1, b2, pool):
    rho = lam * b1
    if rho >= 1:
        raise UnstableError(f"pool {pool + 1} has effective load {rho:.6g} >= 1")
    if math.isinf(b2):
        raise InfiniteMomentError(f"pool {pool + 1} service requirement has infinite second moment")
    return lam * b2 / (2.0 * (1.0 - rho))


def _mix(scenario, a, i, conditioned):
    """Type weights for jobs started on pool i."""
    p = scenario.probabilities
    if not conditioned:
        return p
    w = p * a[i]
    s = w.sum()
    return w / s if s > 0 else p


def latency_rerouting(scenario: Scenario, A, tau, lam, conditioned=False) -> LatencyReport:
    _check_pools(scenario)
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    tau = _tau(tau)
    J = scenario.n_types
    B1 = load_rerouting(scenario, a, tau).expected_B
    B2 = []
    for i in (0, 1):
        l = 1 - i
        B2.append(sum(p[j] * (a[i, j] * F.trunc_moment(r[i, j], tau[i], 2)
                              + (a[l, j] * F.cross_tail_moment(r[i, j], r[l, j], tau[l], 2) if a[l, j] else 0.0))
                      for j in range(J)))
    W = [_pk_wait(lam, B1[i], B2[i], i) for i in (0, 1)]
    per_pool, service = [], []
    for i in (0, 1):
        l = 1 - i
        w = _mix(scenario, a, i, conditioned)
        x = sum(w[j] * (F.trunc_moment(r[i, j], tau[i], 1) + F.cross_after_threshold(r[i, j], r[l, j], tau[i]))
                for j in range(J))
        moved = sum(w[j] * F.tail_prob(r[i, j], tau[i]) for j in range(J))
        service.append(x)
        per_pool.append(W[i] + x + (W[l] * moved if moved else 0.0))
    return _finish(scenario, a, lam, B1, B2, W, service, per_pool)


def latency_replication(scenario: Scenario, A, tau, lam, conditioned=False) -> LatencyReport:
    _check_pools(scenario)
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    tau = _tau(tau)
    J = scenario.n_types
    B1 = load_replication(scenario, a, tau).expected_B
    B2 = []
    for i in (0, 1):
        l = 1 - i
        B2.append(sum(p[j] * (a[i, j] * (F.trunc_moment(r[i, j], tau[i], 2) + F.k_moment(r[i, j], r[l, j], tau[i], 2))
                              + (a[l, j] * F.k_moment(r[l, j], r[i, j], tau[l], 2) if a[l, j] else 0.0))
                      for j in range(J)))
    W = [_pk_wait(lam, B1[i], B2[i], i) for i in (0, 1)]
    per_pool, service = [], []
    for i in (0, 1):
        l = 1 - i
        w = _mix(scenario, a, i, conditioned)
        x = sum(w[j] * (F.trunc_moment(r[i, j], tau[i], 1) + F.k_moment(r[i, j], r[l, j], tau[i], 1))
                for j in range(J))
        service.append(x)
        per_pool.append(W[i] + x)
    return _finish(scenario, a, lam, B1, B2, W, service, per_pool)


def _finish(scenario, a, lam, B1, B2, W, service, per_pool):
    start = (scenario.probabilities[None, :] * a).sum(axis=1)
    overall = float(sum(start[i] * per_pool[i] for i in (0, 1) if start[i] > 0))
    return LatencyReport(tuple(per_pool), overall, tuple(W), tuple(service),
                         tuple(lam * b for b in B1), tuple(B2), tuple(float(s) for s in start))


def latency_policy(scenario: Scenario, policy: PolicySpec, lam, conditioned=False) -> LatencyReport:
    if policy.known_sizes_rule is not None or not isinstance(policy.thresholds, ThresholdVector):
        raise ScenarioError("latency approximations cover single-threshold policies with unknown sizes")
    if policy.carry_over:
        raise ScenarioError("latency approximations do not cover carry-over")
    tau = policy.thresholds.tau
    if policy.kind in ("rerouting", "zero_redundancy"):
        return latency_rerouting(scenario, policy.assignment, tau, lam, conditioned)
    return latency_replication(scenario, policy.assignment, tau, lam, conditioned)


def optimize_latency(scenario: Scenario, family: str, lam, grid=None, knowledge="unknown", conditioned=False):
    """Minimize the overall mean latency approximation over (q, tau); unstable cells are skipped."""
    from .stability import GridSpec, OptimizationResult, _q_grid, _q_around, _taus_around, canonical_family
    grid = grid or GridSpec()
    family = canonical_family(family)
    kind = {"rerouting": "rerouting", "replication": "replication", "zero": "zero_redundancy",
            "full": "full_redundancy"}.get(family)
    if kind is None:
        raise ScenarioError(f"latency optimization does not cover family {family!r}")
    taus = grid.tau_values(scenario.size_model.expected)
    if kind == "zero_redundancy":
        taus = np.array([INF])
    elif kind == "full_redundancy":
        taus = np.array([0.0])
    qs = _q_grid(scenario, knowledge, grid)
    if kind == "full_redundancy":
        qs = qs[:1] * 0 + 0.5

    def value(q, t1, t2):
        A = effective_assignment(scenario, q[0] if knowledge == "unknown" else q, knowledge)
        try:
            if kind in ("rerouting", "zero_redundancy"):
                return latency_rerouting(scenario, A, (t1, t2), lam, conditioned).overall
            return latency_replication(scenario, A, (t1, t2), lam, conditioned).overall
        except (UnstableError, InfiniteMomentError):
            return INF

    best = None
    trace = []
    for q in qs:
        for t1 in taus:
            for t2 in taus:
                v = value(q, t1, t2)
                if grid.keep_trace:
                    trace.append(((tuple(q), (t1, t2)), v))
                # ties (up to rounding): larger thresholds, then q nearer 0.5
                key = (v, -(_rank(t1) + _rank(t2)), float(np.abs(q - 0.5).sum()))
                if best is None or _better(key, best[0]):
                    best = (key, q, t1, t2)
    if best is None or math.isinf(best[0][0]):
        raise UnstableError("every grid cell is unstable at this arrival rate")
    _, q_best, t1b, t2b = best
    cur = best[0][0]
    step, h = grid.q_step, 1.0
    if kind in ("rerouting", "replication"):
        for _ in range(grid.refine_passes):
            step /= 2.0
            h /= 2.0
            for q in itertools.product(*[_q_around(v, step) for v in q_best]):
                for t1 in _taus_around(t1b, taus, h):
                    for t2 in _taus_around(t2b, taus, h):
                        v = value(np.array(q), t1, t2)
                        if v < cur * (1 - 1e-12):
                            cur, q_best, t1b, t2b = v, np.array(q), t1, t2
    A = effective_assignment(scenario, q_best[0] if knowledge == "unknown" else q_best, knowledge)
    if kind == "zero_redundancy":
        pol = PolicySpec.zero(A)
    elif kind == "full_redundancy":
        pol = PolicySpec.full(A)
    else:
        pol = PolicySpec(kind, A, ThresholdVector((t1b, t2b)))
    return OptimizationResult(family, knowledge, pol, float(cur), "latency", trace)


def _better(key, incumbent, rtol=1e-12):
    v, w = key[0], incumbent[0]
    if math.isinf(v) or math.isinf(w) or abs(v - w) > rtol * max(abs(v), abs(w)):
        return v < w
    return key[1:] < incumbent[1:]


def _rank(t):
    return INF if math.isinf(t) else t
