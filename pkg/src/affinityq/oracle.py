"""Monte Carlo estimators for the functionals, used as a testing oracle.

Each estimator draws (X_1, X_2) directly and averages the raw integrand, so
it shares no algebra with :mod:`affinityq.functionals`.  All estimators
return ``(mean, standard_error)`` and are deterministic given the seed.
"""
from __future__ import annotations

import numpy as np

from .model import SizeModel

DEFAULT_SAMPLES = 2_000_000


def draw(size_model: SizeModel, n=DEFAULT_SAMPLES, seed=0):
    rng = np.random.default_rng(seed)
    return size_model.sample_pair(rng, n)


def _estimate(values):
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


def _over(t, tau):
    # strict indicator; tau may be inf
    return t > tau


def mc_trunc_moment(size_model, r, tau, m=1, n=DEFAULT_SAMPLES, seed=0):
    x1, _ = draw(size_model, n, seed)
    return _estimate(np.minimum(x1 / r, tau) ** m)


def mc_tail_prob(size_model, r, tau, n=DEFAULT_SAMPLES, seed=0):
    x1, _ = draw(size_model, n, seed)
    return _estimate(_over(x1 / r, tau))


def mc_cross_tail_moment(size_model, r_own, r_other, tau_other, m=1, n=DEFAULT_SAMPLES, seed=0):
    x1, x2 = draw(size_model, n, seed)
    return _estimate((x1 / r_own) ** m * _over(x2 / r_other, tau_other))


def mc_cross_after_threshold(size_model, r_own, r_other, tau_own, m=1, n=DEFAULT_SAMPLES, seed=0):
    x1, x2 = draw(size_model, n, seed)
    return _estimate((x2 / r_other) ** m * _over(x1 / r_own, tau_own))


def mc_k_moment(size_model, r_i, r_l, y, m=1, n=DEFAULT_SAMPLES, seed=0):
    x1, x2 = draw(size_model, n, seed)
    a = x1 / r_i
    both = np.where(a > y, np.minimum(a - y, x2 / r_l), 0.0)
    return _estimate(both ** m)


def mc_window_moment(size_model, r_own, r_other, cap, lower_own, lower_other, m=1,
                     n=DEFAULT_SAMPLES, seed=0):
    x1, x2 = draw(size_model, n, seed)
    a = x1 / r_own
    keep = (a > lower_own) & (x2 / r_other > lower_other)
    return _estimate(np.minimum(a, cap) ** m * keep)


def mc_carryover_cross(size_model, r_own, r_other, tau_other, m=1, n=DEFAULT_SAMPLES, seed=0):
    x, _ = draw(size_model, n, seed)
    over = x / r_other > tau_other
    left = np.where(over, (x - r_other * tau_other) / r_own, 0.0)
    return _estimate(left ** m)


def mc_carryover_k(size_model, r_i, r_l, tau_i, m=1, n=DEFAULT_SAMPLES, seed=0):
    x, _ = draw(size_model, n, seed)
    over = x / r_i > tau_i
    both = np.where(over, np.minimum(x / r_i - tau_i, (x - r_i * tau_i) / r_l), 0.0)
    return _estimate(both ** m)


def mc_known_sizes(size_model, g_vec, n=DEFAULT_SAMPLES, seed=0):
    """E[g(X_1, X_2)] for a vectorized integrand."""
    x1, x2 = draw(size_model, n, seed)
    return _estimate(g_vec(x1, x2))
