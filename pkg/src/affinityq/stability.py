"""Brute-force maximization of the stability bound over policy parameters.

The search is an exhaustive grid over the assignment fractions q and the
per-pool thresholds, followed by a few local refinement passes that halve
the step around the incumbent.  Loads are affine in the assignment and
separable in the two thresholds, so the whole grid is evaluated with a
handful of precomputed tables and numpy broadcasting.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .functionals import Functionals, ratio_weight
from .load import load_policy
from .model import (INF, AssignmentMatrix, ConfusionMatrix, JobType, KnownSizesRule,
                    PolicySpec, Scenario, ScenarioError, ThresholdVector,
                    effective_assignment, scenario_to_dict)

FAMILIES = ("rerouting", "replication", "zero", "full",
            "known_sizes_rerouting", "known_sizes_replication")
_ALIASES = {"zero_redundancy": "zero", "full_redundancy": "full"}
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class GridSpec:
    q_step: float = 0.05
    tau_points: int = 24
    tau_lo: float = 0.01  # in units of the mean size
    tau_hi: float = 10.0
    refine_passes: int = 3
    weight_step: float = 0.05
    keep_trace: bool = False

    def q_values(self):
        n = int(round(1.0 / self.q_step))
        return np.linspace(0.0, 1.0, n + 1)

    def tau_values(self, mean):
        pos = np.geomspace(self.tau_lo * mean, self.tau_hi * mean, self.tau_points)
        return np.concatenate([[0.0], pos, [INF]])

    def weight_values(self):
        n = int(round(1.0 / self.weight_step))
        return np.linspace(0.0, 1.0, n + 1)

    def as_dict(self):
        return {k: getattr(self, k) for k in ("q_step", "tau_points", "tau_lo", "tau_hi",
                                              "refine_passes", "weight_step")}


@dataclass
class OptimizationResult:
    family: str
    knowledge: str
    best_policy: PolicySpec
    best_value: float
    objective: str = "lambda_max"
    trace: list = field(default_factory=list)

    @property
    def best_lambda_max(self):
        return self.best_value

    @property
    def grid_trace(self):
        return self.trace

    def as_dict(self):
        from .model import policy_to_dict
        return {"family": self.family, "knowledge": self.knowledge, "objective": self.objective,
                "best_value": self.best_value, "best_policy": policy_to_dict(self.best_policy)}


def canonical_family(family):
    family = _ALIASES.get(family, family)
    if family not in FAMILIES:
        raise ScenarioError(f"unknown policy family {family!r}")
    return family


# --------------------------------------------------------------------------
# assignment parametrization
# --------------------------------------------------------------------------

def _mixing(scenario: Scenario, knowledge: str) -> np.ndarray:
    """Matrix M with alpha_1 = M @ q."""
    J = scenario.n_types
    if knowledge == "unknown":
        return np.ones((J, 1))
    if knowledge == "known":
        return np.eye(J)
    if knowledge == "partly_known":
        if scenario.confusion is None:
            raise ScenarioError("partly known job types need a confusion matrix")
        return scenario.confusion.array
    raise ScenarioError(f"unknown knowledge regime {knowledge!r}")


def _q_grid(scenario, knowledge, grid: GridSpec):
    dims = 1 if knowledge == "unknown" else scenario.n_types
    qs = grid.q_values()
    combos = np.array(list(itertools.product(qs, repeat=dims)), dtype=float)
    if combos.shape[0] > 2_000_000:
        raise ScenarioError("assignment grid too large; coarsen q_step")
    return combos


def _policy(scenario, knowledge, kind, q, tau, rule=None) -> PolicySpec:
    q = np.asarray(q, dtype=float)
    A = effective_assignment(scenario, q[0] if knowledge == "unknown" else q, knowledge)
    if kind == "zero_redundancy":
        return PolicySpec.zero(A)
    if kind == "full_redundancy":
        return PolicySpec.full(A)
    return PolicySpec(kind, A, ThresholdVector(tuple(tau)), known_sizes_rule=rule)


def _tie_key(q, t1_rank, t2_rank):
    # larger thresholds first, then assignments closer to an even split
    return (-(t1_rank + t2_rank), float(np.abs(np.asarray(q) - 0.5).sum()))


# --------------------------------------------------------------------------
# threshold families
# --------------------------------------------------------------------------

class _Tables:
    """own[i][j, t] and cross[i][j, t] so that
    E[B_i] = sum_j p_j (alpha_ij own_ij(tau_i) + alpha_lj cross_ij(tau_l))."""

    def __init__(self, scenario, kind, taus):
        F = Functionals(scenario.size_model)
        r = scenario.speeds
        J = scenario.n_types
        self.own = np.zeros((2, J, len(taus)))
        self.cross = np.zeros((2, J, len(taus)))
        for i in (0, 1):
            l = 1 - i
            for j in range(J):
                for k, t in enumerate(taus):
                    own = F.trunc_moment(r[i, j], t, 1)
                    if kind == "replication":
                        own += F.k_moment(r[i, j], r[l, j], t, 1)
                        cross = F.k_moment(r[l, j], r[i, j], t, 1)
                    else:
                        cross = F.cross_tail_moment(r[i, j], r[l, j], t, 1)
                    self.own[i, j, k] = own
                    self.cross[i, j, k] = cross


def _lambda_grid(scenario, alpha1, tables):
    """lambda_max over (assignment, tau_1, tau_2); alpha1 has shape (nq, J)."""
    p = scenario.probabilities
    n1, n2 = scenario.pool_sizes
    a1 = alpha1 * p
    a2 = (1.0 - alpha1) * p
    P1 = a1 @ tables.own[0]      # (nq, nt) function of tau_1
    C1 = a2 @ tables.cross[0]    # function of tau_2
    P2 = a2 @ tables.own[1]      # function of tau_2
    C2 = a1 @ tables.cross[1]    # function of tau_1
    B1 = P1[:, :, None] + C1[:, None, :]
    B2 = P2[:, None, :] + C2[:, :, None]
    with np.errstate(divide="ignore"):
        lam = np.minimum(np.where(B1 > 0, n1 / B1, INF), np.where(B2 > 0, n2 / B2, INF))
    return lam


def _select(lam, qs, t_rank1, t_rank2):
    """Index (iq, it1, it2) of the maximum with deterministic tie-breaking."""
    best = lam.max()
    tol = TIE_RTOL * abs(best) if np.isfinite(best) else 0.0
    cand = np.argwhere(lam >= best - tol)
    keys = [(_tie_key(qs[c[0]], t_rank1[c[1]], t_rank2[c[2]]), tuple(c)) for c in cand]
    return min(keys)[1]


def _taus_around(t, taus_sorted, h):
    """Local threshold candidates for refinement pass with relative step h."""
    finite = taus_sorted[np.isfinite(taus_sorted) & (taus_sorted > 0)]
    ratio = (finite[1] / finite[0]) if len(finite) > 1 else 2.0
    f = ratio ** h
    if t == 0:
        return [0.0, finite[0] / f ** 2 if len(finite) else 1e-3]
    if math.isinf(t):
        return [INF, finite[-1] * f ** 2 if len(finite) else 1e3]
    return [t / f, t, t * f]


def _q_around(q, step):
    return sorted({min(1.0, max(0.0, q + d)) for d in (-step, 0.0, step)})


def _optimize_threshold_family(scenario, kind, knowledge, grid):
    M = _mixing(scenario, knowledge)
    qs = _q_grid(scenario, knowledge, grid)
    taus = grid.tau_values(scenario.size_model.expected)
    tables = _Tables(scenario, kind, taus)
    alpha1 = np.clip(qs @ M.T, 0.0, 1.0)
    lam = _lambda_grid(scenario, alpha1, tables)
    ranks = np.arange(len(taus))
    iq, i1, i2 = _select(lam, qs, ranks, ranks)
    trace = []
    if grid.keep_trace:
        trace = [((tuple(qs[a]), (taus[b], taus[c])), float(lam[a, b, c]))
                 for a, b, c in itertools.product(range(len(qs)), range(len(taus)), range(len(taus)))]
    q_best, t_best, lam_best = qs[iq], [taus[i1], taus[i2]], float(lam[iq, i1, i2])

    step = grid.q_step
    h = 1.0
    for _ in range(grid.refine_passes):
        step /= 2.0
        h /= 2.0
        q_axes = [_q_around(v, step) for v in q_best]
        q_loc = np.array(list(itertools.product(*q_axes)), dtype=float)
        t1 = np.array(_taus_around(t_best[0], taus, h))
        t2 = np.array(_taus_around(t_best[1], taus, h))
        loc = _LocalTables(scenario, kind, t1, t2)
        lam_loc = loc.lambdas(np.clip(q_loc @ M.T, 0.0, 1.0))
        # ranks keep the ordering of the threshold values for tie-breaking
        a, b, c = _select(lam_loc, q_loc, np.argsort(np.argsort(t1)), np.argsort(np.argsort(t2)))
        if lam_loc[a, b, c] > lam_best * (1 + TIE_RTOL):
            q_best, t_best, lam_best = q_loc[a], [t1[b], t2[c]], float(lam_loc[a, b, c])
        if grid.keep_trace:
            trace.append(((tuple(q_loc[a]), (t1[b], t2[c])), float(lam_loc[a, b, c])))
    return q_best, t_best, trace


class _LocalTables:
    def __init__(self, scenario, kind, t1, t2):
        self.scenario = scenario
        both = np.concatenate([t1, t2])
        self.tab = _Tables(scenario, kind, both)
        self.n1 = len(t1)

    def lambdas(self, alpha1):
        s = self.scenario
        p = s.probabilities
        n1, n2 = s.pool_sizes
        k = self.n1
        own, cross = self.tab.own, self.tab.cross
        a1, a2 = alpha1 * p, (1.0 - alpha1) * p
        P1 = a1 @ own[0][:, :k]
        C1 = a2 @ cross[0][:, k:]
        P2 = a2 @ own[1][:, k:]
        C2 = a1 @ cross[1][:, :k]
        B1 = P1[:, :, None] + C1[:, None, :]
        B2 = P2[:, None, :] + C2[:, :, None]
        with np.errstate(divide="ignore"):
            return np.minimum(np.where(B1 > 0, n1 / B1, INF), np.where(B2 > 0, n2 / B2, INF))


# --------------------------------------------------------------------------
# known job sizes
# --------------------------------------------------------------------------

class _KnownSizesTables:
    """Per-node contributions of every candidate threshold for the 'best' rule.

    Identical replicas (and deterministic sizes) need a single node because
    all per-job loads scale with the size; iid replicas integrate over the
    size ratio with Gauss-Legendre nodes in log coordinates.  Used for the
    search only; the final value is recomputed with adaptive quadrature.
    """

    def __init__(self, scenario, kind, nodes_per_piece=24):
        sm = scenario.size_model
        r = scenario.speeds
        J = scenario.n_types
        if sm.correlation == "identical" or sm.family == "deterministic":
            v = np.array([1.0])
            wts = np.array([sm.expected])
        else:
            ratios = {1.0}
            for a in range(J):
                for b in range(J):
                    for s in (0, 1):
                        ratios.add(r[1 - s, a] / r[s, b])
                        ratios.add(r[s, b] / r[1 - s, a])
            edges = sorted(ratios | {1e-8, 1e8})
            edges = [1e-130] + [e for e in edges if 1e-8 <= e <= 1e8] + [1e130]
            x, w = leggauss(nodes_per_piece)
            vs, ws = [], []
            for lo, hi in zip(edges[:-1], edges[1:]):
                a, b = math.log(lo), math.log(hi)
                s = 0.5 * (b - a) * x + 0.5 * (b + a)
                vs.append(np.exp(s))
                ws.append(0.5 * (b - a) * w * np.exp(s))
            v = np.concatenate(vs)
            wts = np.concatenate(ws) * ratio_weight(sm, v)
        self.v, self.w = v, wts
        K, C = len(v), J + 1
        # contrib[s, q, k, j, c]: q=0 own pool s, q=1 other pool
        self.contrib = np.zeros((2, 2, K, J, C))
        for s in (0, 1):
            x_s = np.ones(K) if s == 0 else v
            x_o = v if s == 0 else np.ones(K)
            a = x_s[:, None] / r[s][None, :]           # (K, J)
            b = x_o[:, None] / r[1 - s][None, :]
            t = np.sort(a, axis=1)                      # candidate points
            cands = np.concatenate([np.zeros((K, 1)), t[:, :-1], np.full((K, 1), INF)], axis=1)
            for c in range(C):
                tau = cands[:, c][:, None]
                over = a > tau
                if c == C - 1:
                    own, other = a, np.zeros_like(a)
                elif kind == "replication":
                    k = np.where(over, np.minimum(a - tau, b), 0.0)
                    own, other = np.minimum(a, tau) + k, k
                else:
                    own, other = np.minimum(a, tau), np.where(over, b, 0.0)
                self.contrib[s, 0, :, :, c] = own
                self.contrib[s, 1, :, :, c] = other

    def lambdas(self, scenario, alpha1, weights):
        """lambda_max for every (assignment row, weight) pair: shape (nq, nw)."""
        p = scenario.probabilities
        n = np.asarray(scenario.pool_sizes, dtype=float)
        pa = np.stack([alpha1 * p, (1.0 - alpha1) * p], axis=1)     # (nq, 2, J)
        B = np.zeros((alpha1.shape[0], len(weights), 2))
        for s in (0, 1):
            own = np.einsum("qj,kjc->qkc", pa[:, s], self.contrib[s, 0])   # (nq, K, C)
            oth = np.einsum("qj,kjc->qkc", pa[:, s], self.contrib[s, 1])
            wp = np.stack([weights / n[0], (1.0 - weights) / n[1]], axis=1)  # (nw, 2)
            cost = wp[None, :, s, None, None] * own[:, None] + wp[None, :, 1 - s, None, None] * oth[:, None]
            # ties go to the larger threshold: argmin on the reversed candidate axis
            C = cost.shape[-1]
            choice = C - 1 - np.argmin(cost[..., ::-1], axis=-1)          # (nq, nw, K)
            own_c = np.take_along_axis(np.broadcast_to(own[:, None], cost.shape), choice[..., None], -1)[..., 0]
            oth_c = np.take_along_axis(np.broadcast_to(oth[:, None], cost.shape), choice[..., None], -1)[..., 0]
            B[..., s] += own_c @ self.w
            B[..., 1 - s] += oth_c @ self.w
        with np.errstate(divide="ignore"):
            lam = np.where(B > 0, n / B, INF).min(axis=-1)
        return lam


def _optimize_known_sizes(scenario, kind, knowledge, grid):
    M = _mixing(scenario, knowledge)
    qs = _q_grid(scenario, knowledge, grid)
    alpha1 = np.clip(qs @ M.T, 0.0, 1.0)
    ws = grid.weight_values()
    tab = _KnownSizesTables(scenario, kind)
    lam = tab.lambdas(scenario, alpha1, ws)
    best = lam.max()
    cand = np.argwhere(lam >= best - TIE_RTOL * best)
    iq, iw = min(cand, key=lambda c: (float(np.abs(qs[c[0]] - 0.5).sum()), abs(ws[c[1]] - 0.5), tuple(c)))
    q_best, w_best = qs[iq], ws[iw]
    trace = []
    if grid.keep_trace:
        trace = [((tuple(qs[a]), float(ws[b])), float(lam[a, b]))
                 for a in range(len(qs)) for b in range(len(ws))]
    step, wstep = grid.q_step, grid.weight_step
    cur = lam[iq, iw]
    for _ in range(grid.refine_passes):
        step /= 2.0
        wstep /= 2.0
        q_loc = np.array(list(itertools.product(*[_q_around(v, step) for v in q_best])), dtype=float)
        w_loc = np.array(sorted({min(1.0, max(0.0, w_best + d)) for d in (-wstep, 0.0, wstep)}))
        lam_loc = tab.lambdas(scenario, np.clip(q_loc @ M.T, 0.0, 1.0), w_loc)
        a, b = np.unravel_index(np.argmax(lam_loc), lam_loc.shape)
        if lam_loc[a, b] > cur * (1 + TIE_RTOL):
            q_best, w_best, cur = q_loc[a], float(w_loc[b]), lam_loc[a, b]
    return q_best, float(w_best), trace


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def optimize_stability(scenario: Scenario, family: str, knowledge: str = "unknown",
                       grid: GridSpec | None = None) -> OptimizationResult:
    """Maximize lambda_max over the policy family under the given knowledge regime."""
    grid = grid or GridSpec()
    family = canonical_family(family)
    _mixing(scenario, knowledge)  # validates the regime early
    if family == "full":
        pol = _policy(scenario, "unknown", "full_redundancy", [0.5], (0.0, 0.0))
        return _result(scenario, family, knowledge, pol, [])
    if family == "zero":
        M = _mixing(scenario, knowledge)
        qs = _q_grid(scenario, knowledge, grid)
        tables = _Tables(scenario, "rerouting", np.array([INF]))
        lam = _lambda_grid(scenario, np.clip(qs @ M.T, 0.0, 1.0), tables)[:, 0, 0]
        best = lam.max()
        cand = np.flatnonzero(lam >= best - TIE_RTOL * best)
        iq = min(cand, key=lambda c: (float(np.abs(qs[c] - 0.5).sum()), c))
        q_best, cur, step = qs[iq], best, grid.q_step
        for _ in range(grid.refine_passes):
            step /= 2.0
            q_loc = np.array(list(itertools.product(*[_q_around(v, step) for v in q_best])), dtype=float)
            lam_loc = _lambda_grid(scenario, np.clip(q_loc @ M.T, 0.0, 1.0), tables)[:, 0, 0]
            a = int(np.argmax(lam_loc))
            if lam_loc[a] > cur * (1 + TIE_RTOL):
                q_best, cur = q_loc[a], lam_loc[a]
        trace = [((tuple(q),), float(v)) for q, v in zip(qs, lam)] if grid.keep_trace else []
        pol = _policy(scenario, knowledge, "zero_redundancy", q_best, (INF, INF))
        return _result(scenario, family, knowledge, pol, trace)
    if family in ("rerouting", "replication"):
        q, tau, trace = _optimize_threshold_family(scenario, family, knowledge, grid)
        pol = _policy(scenario, knowledge, family, q, tau)
        return _result(scenario, family, knowledge, pol, trace)

    kind = family.split("_")[-1]
    q, w, trace = _optimize_known_sizes(scenario, kind, knowledge, grid)
    best = _result(scenario, family, knowledge,
                   _policy(scenario, knowledge, kind, q, (INF, INF), KnownSizesRule("best", weight=w)), trace)
    # every unknown-sizes policy is also available when sizes are known; for
    # rerouting, rounding its thresholds down to rational points dominates it
    base = optimize_stability(scenario, kind, knowledge, grid).best_policy
    rule = KnownSizesRule("rational_floor") if kind == "rerouting" else KnownSizesRule("constant")
    seeded = _result(scenario, family, knowledge, replace(base, known_sizes_rule=rule), trace)
    return seeded if seeded.best_value > best.best_value else best


def _result(scenario, family, knowledge, policy, trace):
    value = load_policy(scenario, policy).lambda_max
    return OptimizationResult(family, knowledge, policy, float(value), "lambda_max", trace)


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

COLUMN_FAMILIES = {
    "KT": ("zero", "known"),
    "KS": ("known_sizes", None),
    "Rep": ("replication", None),
    "FRed": ("full", None),
    "Rer": ("rerouting", None),
    "ZRed": ("zero", None),
}
STABILITY_COLUMNS = ("KT", "KS", "Rep", "FRed", "Rer", "ZRed")
AXES = ("r_slow", "p_1", "p_confusion")


def apply_axis(scenario: Scenario, axis: str, value: float) -> Scenario:
    """The scenario with one sweep parameter set (two-type scenarios only)."""
    if scenario.n_types != 2:
        raise ScenarioError("sweep axes are defined for two job types")
    t1, t2 = scenario.job_types
    if axis == "r_slow":
        return scenario.replace(job_types=(JobType(t1.probability, (1.0, value)),
                                           JobType(t2.probability, (value, 1.0))))
    if axis == "p_1":
        return scenario.replace(job_types=(JobType(value, t1.speeds), JobType(1.0 - value, t2.speeds)))
    if axis == "p_confusion":
        return scenario.replace(confusion=ConfusionMatrix.symmetric(value, 2))
    raise ScenarioError(f"unknown sweep axis {axis!r}")


def scenario_hash(scenario: Scenario) -> str:
    blob = json.dumps(scenario_to_dict(scenario), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SweepTable:
    axis: str
    values: list
    columns: dict
    metadata: dict = field(default_factory=dict)

    def rows(self):
        names = list(self.columns)
        for k, v in enumerate(self.values):
            yield [v] + [self.columns[c][k] for c in names]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for key, val in self.metadata.items():
            buf.write(f"# {key}: {val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.axis, *self.columns])
        for row in self.rows():
            w.writerow([_fmt(x) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf"
        return repr(x)
    return str(x)


def read_csv(path) -> SweepTable:
    meta, lines = {}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition(": ")
                meta[key] = val
            elif line.strip():
                lines.append(line)
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    values = [float(r[0]) for r in body]
    cols = {name: [float(r[k + 1]) for r in body] for k, name in enumerate(header[1:])}
    return SweepTable(header[0], values, cols, meta)


def family_value(scenario, column, knowledge, grid) -> float:
    """lambda_max for one figure column."""
    fam, kn = COLUMN_FAMILIES[column]
    kn = kn or knowledge
    if fam == "known_sizes":
        return max(optimize_stability(scenario, "known_sizes_rerouting", kn, grid).best_value,
                   optimize_stability(scenario, "known_sizes_replication", kn, grid).best_value)
    return optimize_stability(scenario, fam, kn, grid).best_value


def sweep(template: Scenario, axis: str, values: Sequence[float], families: Sequence[str] = STABILITY_COLUMNS,
          knowledge: str | None = None, grid: GridSpec | None = None, metadata: dict | None = None) -> SweepTable:
    """One optimization per (axis value, column).

    ``families`` are column names (KT, KS, Rep, FRed, Rer, ZRed) or family
    names accepted by :func:`optimize_stability`.  The knowledge regime
    defaults to partly known for confusion sweeps and unknown otherwise.
    """
    if axis not in AXES:
        raise ScenarioError(f"unknown sweep axis {axis!r}")
    values = [float(v) for v in values]
    if values != sorted(values):
        raise ScenarioError("sweep values must be sorted")
    grid = grid or GridSpec()
    if knowledge is None:
        knowledge = "partly_known" if axis == "p_confusion" else "unknown"
    cols = {str(f): [] for f in families}
    for v in values:
        sc = apply_axis(template, axis, v)
        for f in families:
            if f in COLUMN_FAMILIES:
                cols[f].append(family_value(sc, f, knowledge, grid))
            else:
                cols[f].append(optimize_stability(sc, f, knowledge, grid).best_value)
    from . import __version__
    meta = {"scenario_hash": scenario_hash(template), "axis": axis, "knowledge": knowledge,
            "grid": json.dumps(grid.as_dict(), sort_keys=True), "version": f"affinityq {__version__}"}
    meta.update(metadata or {})
    return SweepTable(axis, values, cols, meta)
