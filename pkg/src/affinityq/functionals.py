"""Distribution-dependent expectations behind the load and latency formulas.

Notation: ``A = X_i / r_i`` is the service time on the pool being looked at
and ``B = X_l / r_l`` the service time the same job would need on the other
pool.  Under identical replicas ``X_i = X_l = X``; under iid replicas the two
sizes are independent copies.

Everything is closed form except the iid Pareto k-functional, which is a
one-dimensional integral of survival functions.  Divergent moments come back
as ``math.inf`` (see :data:`INFINITE`) rather than raising.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import integrate

from .model import INF, SizeModel

# A moment is a plain float; ``INFINITE`` marks a divergent one.
MomentValue = float
INFINITE = math.inf

QUAD_RTOL = 1e-9
# log-space integrands are cut off here; every tail we integrate is negligible by then
_LOG_HUGE = 700.0


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


def is_infinite(v) -> bool:
    return math.isinf(v)


def _shifted(sm: SizeModel, m: int, a: float, b: float = INF) -> float:
    """E[(X - a)^m 1{a < X <= b}] for a >= 0, computed without cancellation where possible."""
    if not b > a:
        return 0.0
    if m == 0:
        return sm.incomplete(0, a, b)
    if sm.family == "exponential":
        # memoryless: given X > a the excess is again exponential
        mu = sm.mean
        excess = _exp_head(mu, m, b - a)
        return math.exp(-a / mu) * excess
    if sm.family == "deterministic":
        v = sm.mean
        return (v - a) ** m if a < v <= b else 0.0
    i1 = sm.incomplete(1, a, b)
    i0 = sm.incomplete(0, a, b)
    if m == 1:
        return INF if math.isinf(i1) else max(i1 - a * i0, 0.0)
    i2 = sm.incomplete(2, a, b)
    if math.isinf(i2):
        return INF
    return max(i2 - 2 * a * i1 + a * a * i0, 0.0)


def _exp_head(mu, m, c):
    """E[Y^m 1{Y <= c}] for Y exponential with mean mu."""
    if math.isinf(c):
        return mu ** m * math.factorial(m)
    z = c / mu
    if z <= 0:
        return 0.0
    # complementary form; for small z use the series to avoid cancellation
    if z < 0.5:
        # sum_{k>m} z^k/k!  times mu^m m! e^{-z}
        s, term, k = 0.0, 1.0, 0
        for k in range(1, m + 1):
            term *= z / k
        k = m
        while True:
            k += 1
            term *= z / k
            s += term
            if term <= 1e-17 * s:
                break
        return mu ** m * math.factorial(m) * math.exp(-z) * s
    s, term = 0.0, 1.0
    for k in range(m + 1):
        if k:
            term *= z / k
        s += term
    return mu ** m * math.factorial(m) * (1.0 - math.exp(-z) * s)


def _capped_above(sm: SizeModel, m: int, cap: float, u: float) -> float:
    """E[min(X, cap)^m 1{X > u}] with cap possibly infinite."""
    u = max(u, 0.0)
    if math.isinf(u):
        return 0.0
    if math.isinf(cap):
        return sm.incomplete(m, u, INF)
    if cap <= u:
        return cap ** m * sm.survival(u)
    return sm.incomplete(m, u, cap) + cap ** m * sm.survival(cap)


@dataclass(frozen=True)
class Functionals:
    """All expectation primitives for one size model.

    ``correlation`` arguments default to the size model's own correlation.
    """

    size_model: SizeModel
    rtol: float = QUAD_RTOL

    def _corr(self, correlation):
        return self.size_model.correlation if correlation is None else correlation

    # -- single-pool quantities --------------------------------------------

    def trunc_moment(self, r, tau, m=1) -> MomentValue:
        """E[(min{X/r, tau})^m]."""
        if tau <= 0:
            return 0.0
        sm = self.size_model
        if math.isinf(tau):
            return sm.moment(m) / r ** m
        return _capped_above(sm, m, r * tau, 0.0) / r ** m

    def tail_prob(self, r, tau) -> float:
        """P(X/r > tau)."""
        if math.isinf(tau):
            return 0.0
        return self.size_model.survival(r * tau)

    def mean_time(self, r, m=1) -> MomentValue:
        """E[(X/r)^m]."""
        return self.size_model.moment(m) / r ** m

    # -- two-pool quantities -----------------------------------------------

    def cross_tail_moment(self, r_own, r_other, tau_other, m=1, correlation=None) -> MomentValue:
        """E[(X_i/r_own)^m 1{X_l/r_other > tau_other}]."""
        if math.isinf(tau_other):
            return 0.0
        sm = self.size_model
        if self._corr(correlation) == "identical" or sm.family == "deterministic":
            return sm.incomplete(m, r_other * tau_other, INF) / r_own ** m
        s = sm.survival(r_other * tau_other)
        return 0.0 if s == 0 else sm.moment(m) / r_own ** m * s

    def cross_after_threshold(self, r_own, r_other, tau_own, correlation=None, m=1) -> MomentValue:
        """E[(X_l/r_other)^m 1{X_i/r_own > tau_own}]: other-pool time of jobs passing the own threshold."""
        return self.cross_tail_moment(r_other, r_own, tau_own, m, correlation)

    def k_moment(self, r_i, r_l, y, m=1, correlation=None) -> MomentValue:
        """E[(min{X_i/r_i - y, X_l/r_l})^m 1{X_i/r_i > y}].

        The m-th moment of the time a job replicated at ``y`` spends running
        in both pools.
        """
        if math.isinf(y):
            return 0.0
        sm = self.size_model
        y = max(y, 0.0)
        if sm.family == "deterministic":
            v = sm.mean
            return min(v / r_i - y, v / r_l) ** m if v / r_i > y else 0.0
        if self._corr(correlation) == "identical":
            a = r_i * y
            if r_i >= r_l:
                # X/r_i - y <= X/r_l everywhere
                return _shifted(sm, m, a) / r_i ** m
            xs = y * r_i * r_l / (r_l - r_i)  # crossover size
            head = _shifted(sm, m, a, xs) / r_i ** m
            tail = sm.incomplete(m, xs, INF) / r_l ** m
            return head + tail
        if sm.family == "exponential":
            mu = sm.mean
            return math.exp(-r_i * y / mu) * math.factorial(m) * (mu / (r_i + r_l)) ** m
        return self._k_iid_pareto(r_i, r_l, y, m)

    def _k_iid_pareto(self, r_i, r_l, y, m):
        # E[min(A - y, B)^m; A > y] = int_0^inf m t^{m-1} S(r_i (y + t)) S(r_l t) dt
        sm = self.size_model
        alpha = sm.index
        if m >= 2 * alpha:
            return INF
        b_i = max(1.0 / r_i - y, 0.0)  # below this S(r_i(y+t)) = 1
        b_l = 1.0 / r_l
        lo, hi = sorted((b_i, b_l))
        # on [0, lo] both survivals are 1
        total = lo ** m
        S = sm.survival

        def f(t):
            return m * t ** (m - 1) * S(r_i * (y + t)) * S(r_l * t)

        if hi > lo:
            if lo > 0 and hi > 100 * lo:
                v, err = integrate.quad(lambda s: f(math.exp(s)) * math.exp(s), math.log(lo), math.log(hi),
                                        epsabs=0, epsrel=self.rtol, limit=200)
            else:
                v, err = integrate.quad(f, lo, hi, epsabs=0, epsrel=self.rtol, limit=200)
            total += v
        # heavy tail, integrate in log-space: t = e^s
        start = max(hi, 1e-300)

        def g(s):
            if s > _LOG_HUGE:
                return 0.0
            t = math.exp(s)
            return f(t) * t

        v, err = integrate.quad(g, math.log(start), INF, epsabs=0, epsrel=self.rtol, limit=400)
        if not np.isfinite(v) or err > max(1e-6 * abs(v), 1e-14):
            raise QuadratureError(f"iid pareto k-functional did not converge (err {err:.3g})")
        return total + v

    def window_moment(self, r_own, r_other, cap, lower_own, lower_other, m=1, correlation=None) -> MomentValue:
        """E[(min{X_i/r_own, cap})^m 1{X_i/r_own > lower_own, X_l/r_other > lower_other}].

        The general term of multi-threshold rerouting loads.
        """
        if math.isinf(lower_own) or math.isinf(lower_other):
            return 0.0
        sm = self.size_model
        c = INF if math.isinf(cap) else r_own * cap
        if self._corr(correlation) == "identical" or sm.family == "deterministic":
            u = max(r_own * lower_own, r_other * lower_other)
            return _capped_above(sm, m, c, u) / r_own ** m
        s = sm.survival(r_other * lower_other)
        if s == 0:
            return 0.0
        return _capped_above(sm, m, c, r_own * lower_own) / r_own ** m * s

    # -- carry-over variants (identical replicas only) ---------------------

    def _require_identical(self, what):
        if self.size_model.correlation != "identical" and self.size_model.family != "deterministic":
            raise ValueError(f"{what} is only defined for identical replicas")

    def carryover_cross(self, r_own, r_other, tau_other, m=1) -> MomentValue:
        """E[((X - r_other tau_other)/r_own)^m 1{X/r_other > tau_other}]."""
        self._require_identical("carry-over rerouting")
        if math.isinf(tau_other):
            return 0.0
        return _shifted(self.size_model, m, r_other * tau_other) / r_own ** m

    def carryover_k(self, r_i, r_l, tau_i, m=1) -> MomentValue:
        """E[min{X/r_i - tau_i, (X - r_i tau_i)/r_l}^m 1{X/r_i > tau_i}].

        Both arguments of the min are the leftover size over a speed, so the
        min is the leftover size at the faster of the two speeds.
        """
        self._require_identical("carry-over replication")
        if math.isinf(tau_i):
            return 0.0
        return _shifted(self.size_model, m, r_i * tau_i) / max(r_i, r_l) ** m

    # -- known sizes --------------------------------------------------------

    def integrate_known_sizes(self, g, breakpoints=(), homogeneous=False, rtol=1e-9, inner_breakpoints=None):
        """E[g(X_1, X_2)] under this size model.

        ``g`` takes two floats.  ``breakpoints`` are sizes where ``g`` (or its
        derivative) may jump, used to split the integration range.  With
        ``homogeneous=True`` the caller promises g(c x1, c x2) = c g(x1, x2),
        which turns the problem into a one-dimensional integral.
        """
        return integrate_known_sizes(g, self.size_model, breakpoints, homogeneous, rtol, inner_breakpoints)


# --------------------------------------------------------------------------
# Pointwise integrands for known sizes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PointwiseTerms:
    min_term: float  # min{x_i/r_i, tau}
    indicator: float  # 1{x_i/r_i > tau}
    k: float  # min{x_i/r_i - tau, x_l/r_l} 1{x_i/r_i > tau}
    cross: float  # (x_l/r_l) 1{x_i/r_i > tau}


def pointwise_terms(x_own, x_other, r_own, r_other, tau) -> PointwiseTerms:
    """Per-job quantities for a job of known sizes started on the 'own' pool.

    The indicator is strict: a job that completes exactly at the threshold is
    not rerouted or replicated.
    """
    a = x_own / r_own
    b = x_other / r_other
    over = a > tau
    return PointwiseTerms(
        min_term=min(a, tau),
        indicator=1.0 if over else 0.0,
        k=min(a - tau, b) if over else 0.0,
        cross=b if over else 0.0,
    )


def ratio_weight(size_model: SizeModel, v):
    """Density h with E[X_1 g(1, X_2/X_1)] = int g(1, v) h(v) dv for iid sizes."""
    v = np.asarray(v, dtype=float)
    if size_model.family == "exponential":
        with np.errstate(over="ignore"):
            return 2.0 * size_model.mean / (1.0 + v) ** 3
    if size_model.family == "pareto_type1":
        a = size_model.index
        with np.errstate(divide="ignore", over="ignore"):
            w = np.where(v < 1.0, v ** (a - 2.0), v ** (-a - 1.0))
        return a * a * w / (2.0 * a - 1.0)
    raise ValueError("ratio density needs a continuous family")


def _quad_pieces(f, points, lo, hi, rtol, log_space=False):
    """Integrate f over [lo, hi] split at ``points``; optionally in log coordinates.

    quad's own warnings are silenced; the error estimate is checked here instead.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _quad_pieces_unchecked(f, points, lo, hi, rtol, log_space)


def _quad_pieces_unchecked(f, points, lo, hi, rtol, log_space):
    pts = sorted({p for p in points if lo < p < hi and np.isfinite(p)})
    edges = [lo, *pts, hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if log_space:
            fa, fb = math.log(a), (INF if math.isinf(b) else math.log(b))

            def h(s, f=f):
                if s > _LOG_HUGE:
                    return 0.0
                t = math.exp(s)
                return f(t) * t

            v, err = integrate.quad(h, fa, fb, epsabs=0, epsrel=rtol, limit=400)
        else:
            v, err = integrate.quad(f, a, b, epsabs=0, epsrel=rtol, limit=400)
        if not np.isfinite(v) or err > max(1e-6 * abs(v), 1e-13):
            raise QuadratureError(f"integral over [{a:.4g}, {b:.4g}] did not converge (err {err:.3g})")
        total += v
    return total


def integrate_known_sizes(g: Callable[[float, float], float], size_model: SizeModel,
                          breakpoints: Iterable[float] = (), homogeneous=False, rtol=1e-9,
                          inner_breakpoints: Callable[[float], Iterable[float]] | None = None) -> float:
    """E[g(X_1, X_2)] for a pointwise integrand g; see :meth:`Functionals.integrate_known_sizes`.

    Identical replicas integrate along the diagonal x_1 = x_2.  For iid
    homogeneous integrands ``breakpoints`` are ratios x_2/x_1; for general iid
    integrands they split the outer variable x_1 and ``inner_breakpoints(x_1)``
    splits the inner one.
    """
    sm = size_model
    if sm.family == "deterministic":
        v = sm.mean
        return float(g(v, v))
    bps = [float(b) for b in breakpoints]
    if sm.correlation == "identical":
        if homogeneous:
            return sm.expected * float(g(1.0, 1.0))
        if sm.family == "exponential":
            mu = sm.mean
            return _quad_pieces(lambda x: g(x, x) * math.exp(-x / mu) / mu, bps, 0.0, INF, rtol)
        a = sm.index
        return _quad_pieces(lambda x: g(x, x) * a * x ** (-a - 1.0), bps, 1.0, INF, rtol, log_space=True)
    if homogeneous:
        h = lambda v: float(g(1.0, v)) * float(ratio_weight(sm, v))
        pts = [b for b in bps if b > 0] + ([1.0] if sm.family == "pareto_type1" else [])
        lo = min([1.0] + pts) * 1e-3
        # log coordinates cope with the integrable singularity of h at 0
        return _quad_pieces(h, pts + [lo], 1e-300, INF, rtol, log_space=True)
    if inner_breakpoints is None:
        inner_breakpoints = lambda x1: bps
    if sm.family == "exponential":
        mu = sm.mean
        dens = lambda x: math.exp(-x / mu) / mu
        lo, log_space = 0.0, False
    else:
        a = sm.index
        dens = lambda x: a * x ** (-a - 1.0)
        lo, log_space = 1.0, True

    def inner(x1):
        f = lambda x2: float(g(x1, x2)) * dens(x2)
        return _quad_pieces(f, inner_breakpoints(x1), lo, INF, rtol * 10, log_space)

    return _quad_pieces(lambda x1: inner(x1) * dens(x1), bps, lo, INF, rtol * 10, log_space)


def find_switch_points(signature, lo, hi, n=256, log_space=True):
    """Locate the points in [lo, hi] where ``signature(x)`` changes value.

    Samples a grid and bisects every interval whose endpoints disagree.
    Features narrower than the grid spacing can be missed; callers add any
    analytically known breakpoints on top.
    """
    if log_space:
        xs = np.geomspace(lo, hi, n)
    else:
        xs = np.linspace(lo, hi, n)
    sigs = [signature(float(x)) for x in xs]
    out = []
    for k in range(n - 1):
        if sigs[k] == sigs[k + 1]:
            continue
        a, b = float(xs[k]), float(xs[k + 1])
        sa = sigs[k]
        for _ in range(200):
            mid = math.sqrt(a * b) if log_space else 0.5 * (a + b)
            if not a < mid < b:
                break
            if signature(mid) == sa:
                a = mid
            else:
                b = mid
        out.append(b)
    return out


# module-level conveniences -------------------------------------------------

def trunc_moment(size_model, r, tau, m=1):
    return Functionals(size_model).trunc_moment(r, tau, m)


def tail_prob(size_model, r, tau):
    return Functionals(size_model).tail_prob(r, tau)


def cross_tail_moment(size_model, r_own, r_other, tau_other, m=1, correlation=None):
    return Functionals(size_model).cross_tail_moment(r_own, r_other, tau_other, m, correlation)


def cross_after_threshold(size_model, r_own, r_other, tau_own, correlation=None, m=1):
    return Functionals(size_model).cross_after_threshold(r_own, r_other, tau_own, correlation, m)


def k_moment(size_model, r_i, r_l, y, m=1, correlation=None):
    return Functionals(size_model).k_moment(r_i, r_l, y, m, correlation)


def carryover_cross(size_model, r_own, r_other, tau_other, m=1):
    return Functionals(size_model).carryover_cross(r_own, r_other, tau_other, m)


def carryover_k(size_model, r_i, r_l, tau_i, m=1):
    return Functionals(size_model).carryover_k(r_i, r_l, tau_i, m)
