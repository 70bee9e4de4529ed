"""Expected service requirement per pool, effective loads and stability bounds.

For a policy that starts a type-j job on pool i with probability
``alpha[i, j]``, ``E[B_i]`` is the expected amount of server time one
arriving job consumes in pool i.  With arrival rate lam the effective load
per server is ``rho_i = lam * E[B_i] / n_i`` and the stability bound is
``min_i n_i / E[B_i]``.  That bound is necessary for stability; whether it
is also sufficient is something the simulator can probe, not something this
module asserts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .functionals import Functionals, find_switch_points, integrate_known_sizes
from .model import (INF, AssignmentMatrix, KnownSizesRule, PolicySpec, Scenario,
                    ThresholdMatrix, ThresholdVector, ScenarioError)


@dataclass(frozen=True)
class LoadReport:
    expected_B: tuple[float, float]
    pool_sizes: tuple[int, int]
    lam: float | None = None

    @property
    def lambda_max(self) -> float:
        out = INF
        for n, b in zip(self.pool_sizes, self.expected_B):
            if b > 0:
                out = min(out, n / b)
        return out

    @property
    def rho(self) -> tuple[float, float] | None:
        if self.lam is None:
            return None
        return tuple(self.lam * b / n for b, n in zip(self.expected_B, self.pool_sizes))

    def at(self, lam) -> "LoadReport":
        return LoadReport(self.expected_B, self.pool_sizes, lam)

    def as_dict(self) -> dict:
        d = {"expected_B": list(self.expected_B), "lambda_max": self.lambda_max}
        if self.lam is not None:
            d["lambda"] = self.lam
            d["rho"] = list(self.rho)
        return d


def _alpha(A, J) -> np.ndarray:
    a = A.array if isinstance(A, AssignmentMatrix) else np.asarray(A, dtype=float)
    if a.shape != (2, J):
        raise ScenarioError(f"assignment must be 2x{J}, got {a.shape}")
    return a


def _tau(tau):
    if isinstance(tau, ThresholdVector):
        return tau.tau
    t = tuple(float(v) for v in tau)
    if len(t) != 2:
        raise ScenarioError("threshold vector needs two entries")
    return t


def _report(scenario, B, lam):
    return LoadReport(tuple(float(b) for b in B), tuple(scenario.pool_sizes), lam)


def load_rerouting(scenario: Scenario, A, tau, lam=None, carry_over=False) -> LoadReport:
    """Rerouting at received processing time ``tau_i`` on the starting pool."""
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    tau = _tau(tau)
    B = [0.0, 0.0]
    for i in (0, 1):
        l = 1 - i
        for j in range(scenario.n_types):
            own = F.trunc_moment(r[i, j], tau[i], 1)
            if carry_over:
                moved = F.carryover_cross(r[i, j], r[l, j], tau[l])
            else:
                moved = F.cross_tail_moment(r[i, j], r[l, j], tau[l], 1)
            B[i] += p[j] * (a[i, j] * own + (a[l, j] * moved if a[l, j] else 0.0))
    return _report(scenario, B, lam)


def load_replication(scenario: Scenario, A, tau, lam=None, carry_over=False) -> LoadReport:
    """Replication at received processing time ``tau_i``; first replica to finish wins."""
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    tau = _tau(tau)
    k = F.carryover_k if carry_over else (lambda ri, rl, y: F.k_moment(ri, rl, y, 1))
    B = [0.0, 0.0]
    for i in (0, 1):
        l = 1 - i
        for j in range(scenario.n_types):
            started_here = F.trunc_moment(r[i, j], tau[i], 1) + k(r[i, j], r[l, j], tau[i])
            replica_here = k(r[l, j], r[i, j], tau[l]) if a[l, j] else 0.0
            B[i] += p[j] * (a[i, j] * started_here + a[l, j] * replica_here)
    return _report(scenario, B, lam)


def load_zero_redundancy(scenario: Scenario, A, lam=None) -> LoadReport:
    """Every job runs to completion on the pool it was sent to."""
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    B = [sum(p[j] * a[i, j] * F.mean_time(r[i, j]) for j in range(scenario.n_types)) for i in (0, 1)]
    return _report(scenario, B, lam)


def load_full_redundancy(scenario: Scenario, lam=None) -> LoadReport:
    """Every job runs in both pools from the start; independent of the assignment."""
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    B = [sum(p[j] * F.k_moment(r[i, j], r[1 - i, j], 0.0, 1) for j in range(scenario.n_types))
         for i in (0, 1)]
    return _report(scenario, B, lam)


def load_rerouting_multi(scenario: Scenario, A, T, lam=None, cumulative=False) -> LoadReport:
    """Rerouting back and forth up to n times, row i of ``T`` holding the stage limits
    of jobs that start in pool i.

    Stage m of a job that started in pool s runs in pool s for even m and in
    the other pool for odd m; it restarts from scratch and ends after
    ``T[s][m]`` time units (stage n runs to completion).

    By default a stage is reached when the job outlasted just the previous
    limit in each pool.  That is exact whenever every row is nondecreasing
    within each pool's stages (always true for n <= 2).  ``cumulative=True``
    uses the running maxima instead, which is exact for any matrix.
    """
    if not isinstance(T, ThresholdMatrix):
        T = ThresholdMatrix(tuple(tuple(row) for row in T))
    F = Functionals(scenario.size_model)
    p, r = scenario.probabilities, scenario.speeds
    a = _alpha(A, scenario.n_types)
    n = T.n
    # tau[s][m] with tau[s][0] = 0
    tau = [(0.0,) + tuple(T.rows[s]) + (INF,) for s in (0, 1)]

    def lower(s, upto, parity):
        # largest limit among stages k <= upto with k % 2 == parity (k >= 1)
        if not cumulative:
            return tau[s][upto] if upto >= 1 else 0.0
        vals = [tau[s][k] for k in range(1, upto + 1) if k % 2 == parity]
        return max(vals) if vals else 0.0

    B = [0.0, 0.0]
    for i in (0, 1):
        l = 1 - i
        for j in range(scenario.n_types):
            ri, rl = r[i, j], r[l, j]
            b = a[i, j] * F.trunc_moment(ri, tau[i][1], 1)
            for m in range(1, n + 1):
                s = l if m % 2 else i
                if a[s, j] == 0:
                    continue
                cap = tau[s][m + 1] if m < n else INF
                lo_own = lower(s, m - 1, (m - 1) % 2)
                lo_other = lower(s, m, m % 2)
                b += a[s, j] * F.window_moment(ri, rl, cap, lo_own, lo_other, 1)
            B[i] += p[j] * b
    return _report(scenario, B, lam)


# --------------------------------------------------------------------------
# Known job sizes
# --------------------------------------------------------------------------

class KnownSizesModel:
    """Per-job loads when the sizes (x_1, x_2) are known on arrival.

    A job of type j started on pool s with own size x_s and other size x_o is
    given a threshold by ``rule``.  Its candidate time points are the
    completion times ``x_s / r_sj`` of the types; the rule chooses among
    {0, the J-1 smallest of these, inf} or uses the policy thresholds.
    """

    def __init__(self, scenario: Scenario, policy: PolicySpec):
        rule = policy.known_sizes_rule or KnownSizesRule("constant")
        errs = rule.errors(scenario.n_types)
        if errs:
            raise ScenarioError(errs)
        if policy.carry_over:
            raise ScenarioError("carry-over is not defined for known job sizes")
        if isinstance(policy.thresholds, ThresholdMatrix):
            raise ScenarioError("known-sizes rules apply to single-threshold policies only")
        self.scenario = scenario
        self.rule = rule
        self.replication = policy.redundancy_kind == "replication"
        self.alpha = _alpha(policy.assignment, scenario.n_types)
        self.p = scenario.probabilities
        self.r = scenario.speeds
        self.n = np.asarray(scenario.pool_sizes, dtype=float)
        self.tau = policy.thresholds.tau
        self.pw = self.p[None, :] * self.alpha  # p_j alpha_sj

    @property
    def homogeneous(self) -> bool:
        """True when per-job loads scale linearly with the sizes."""
        if self.rule.rule in ("rational", "best"):
            return True
        return all(t == 0 or math.isinf(t) for t in self.tau)

    def _contrib(self, s, x_s, x_o, tau):
        """Loads (own pool, other pool) per type, plus regime bits."""
        a = x_s / self.r[s]
        b = x_o / self.r[1 - s]
        over = a > tau
        if math.isinf(tau):
            own, other = a, np.zeros_like(a)
            bits = (0,) * len(a)
        elif self.replication:
            left = a - tau
            k = np.where(over, np.minimum(left, b), 0.0)
            own, other = np.minimum(a, tau) + k, k
            bits = tuple(int(o) + 2 * int(o and lt < bb) for o, lt, bb in zip(over, left, b))
        else:
            own, other = np.minimum(a, tau), np.where(over, b, 0.0)
            bits = tuple(int(o) for o in over)
        return own, other, bits

    def _candidates(self, s, x_s):
        t = np.sort(x_s / self.r[s])
        return t

    def threshold(self, s, x_s, x_o):
        """Threshold chosen for a job started on pool s; returns (tau, choice id)."""
        rule = self.rule.rule
        if rule == "constant":
            return self.tau[s], -1
        t = self._candidates(s, x_s)
        J = len(t)
        if rule == "rational":
            k = self.rule.order[s]
            return float(t[k - 1]), k
        if rule == "rational_floor":
            tau = self.tau[s]
            if tau >= t[-1]:
                return INF, J
            pts = [0.0] + [float(v) for v in t[:-1]]
            k = max(idx for idx, v in enumerate(pts) if v <= tau)
            return pts[k], k
        # best: weighted per-job cost over {0, t_1..t_{J-1}, inf}; ties go to the larger threshold
        w = self.rule.weight
        weights = np.array([w, 1.0 - w]) / self.n
        cands = [0.0] + [float(v) for v in t[:-1]] + [INF]
        best_k, best_c = None, INF
        for k in range(len(cands) - 1, -1, -1):
            own, other, _ = self._contrib(s, x_s, x_o, cands[k])
            c_own = weights[s] * np.dot(self.pw[s], own)
            c_other = weights[1 - s] * np.dot(self.pw[s], other)
            c = c_own + c_other
            if c < best_c - 1e-13 * max(abs(c), 1e-300):
                best_k, best_c = k, c
        return cands[best_k], best_k

    def pointwise(self, x1, x2):
        """(E-weighted loads b_1, b_2 of one job with sizes (x1, x2), signature)."""
        b = np.zeros(2)
        sig = []
        xs = (x1, x2)
        for s in (0, 1):
            if not self.pw[s].any():
                continue
            tau, choice = self.threshold(s, xs[s], xs[1 - s])
            own, other, bits = self._contrib(s, xs[s], xs[1 - s], tau)
            b[s] += np.dot(self.pw[s], own)
            b[1 - s] += np.dot(self.pw[s], other)
            sig.append((choice, bits))
        return b, tuple(sig)

    def expected_B(self, rtol=1e-9):
        sm = self.scenario.size_model
        cache = {}

        def loads(x1, x2):
            key = (x1, x2)
            if key not in cache:
                cache[key] = self.pointwise(x1, x2)[0]
            return cache[key]

        if sm.family == "deterministic":
            return tuple(loads(sm.mean, sm.mean))
        if sm.correlation == "identical" and self.homogeneous:
            return tuple(sm.expected * loads(1.0, 1.0))
        if sm.family == "exponential":
            lo, hi = sm.mean * 1e-9, sm.mean * 80
        else:
            lo, hi = 1.0, 1e9
        static = [float(self.r[s, j] * t) for s in (0, 1) for j in range(self.scenario.n_types)
                  for t in self.tau if 0 < t < INF]
        if sm.correlation == "identical":
            sig = lambda x: self.pointwise(x, x)[1]
            bps = static + find_switch_points(sig, lo, hi)
            return tuple(integrate_known_sizes(lambda x1, x2, i=i: loads(x1, x2)[i], sm, bps, False, rtol)
                         for i in (0, 1))
        if self.homogeneous:
            sig = lambda v: self.pointwise(1.0, v)[1]
            bps = find_switch_points(sig, 1e-8, 1e8)
            return tuple(integrate_known_sizes(lambda x1, x2, i=i: loads(x1, x2)[i], sm, bps, True, rtol)
                         for i in (0, 1))

        @lru_cache(maxsize=None)
        def inner_bps(x1):
            return tuple(static + self._inner_breakpoints(x1))

        return tuple(integrate_known_sizes(lambda x1, x2, i=i: loads(x1, x2)[i], sm, static, False,
                                           max(rtol, 1e-8), inner_breakpoints=inner_bps)
                     for i in (0, 1))

    def _inner_breakpoints(self, x1):
        """Values of x2 where the integrand kinks or jumps, for fixed x1 (constant-type rules)."""
        r, J = self.r, self.scenario.n_types
        out = []
        # started on pool 1: threshold fixed by x1, replication regime switches in x2
        tau1, _ = self.threshold(0, x1, 0.0)
        if self.replication and tau1 < INF:
            out += [r[1, j] * (x1 / r[0, j] - tau1) for j in range(J)]
        # started on pool 2: own indicator and rounding switches live in x2
        tau2 = self.tau[1]
        if 0 < tau2 < INF:
            out += [r[1, j] * tau2 for j in range(J)]
            if self.replication:
                out += [r[1, j] * (x1 / r[0, j] + tau2) for j in range(J)]
        if self.rule.rule == "rational_floor" and self.replication:
            for j in range(J):
                out.append(r[1, j] * x1 / r[0, j])
                for k in range(J):
                    d = 1.0 / r[1, j] - 1.0 / r[1, k]
                    if d > 0:
                        out.append((x1 / r[0, j]) / d)
        return [v for v in out if v > 0 and np.isfinite(v)]


def load_known_sizes(scenario: Scenario, policy: PolicySpec, lam=None, rtol=1e-9) -> LoadReport:
    """Loads when job sizes are known on arrival and thresholds follow ``policy.known_sizes_rule``."""
    return _report(scenario, KnownSizesModel(scenario, policy).expected_B(rtol), lam)


def load_policy(scenario: Scenario, policy: PolicySpec, lam=None) -> LoadReport:
    """Dispatch on the policy kind."""
    if policy.known_sizes_rule is not None:
        return load_known_sizes(scenario, policy, lam)
    A = policy.assignment
    if isinstance(policy.thresholds, ThresholdMatrix):
        return load_rerouting_multi(scenario, A, policy.thresholds, lam)
    if policy.kind == "zero_redundancy":
        return load_zero_redundancy(scenario, A, lam)
    if policy.kind == "full_redundancy":
        return load_full_redundancy(scenario, lam)
    if policy.kind == "rerouting":
        return load_rerouting(scenario, A, policy.thresholds, lam, policy.carry_over)
    return load_replication(scenario, A, policy.thresholds, lam, policy.carry_over)
