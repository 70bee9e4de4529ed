"""Scenario and policy data types for two-pool systems with job-server affinity.

A scenario fixes the pools, the job types (probability and per-pool speed),
the job size model and, optionally, a label confusion matrix.  The arrival
rate is never stored; it is an argument to every operation that needs it.

Thresholds use ``math.inf`` (exported as :data:`INF`) as the "never"
sentinel.  Code downstream always branches on ``math.isinf`` explicitly
rather than treating it as a large number.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import special

INF = math.inf

SIZE_FAMILIES = ("exponential", "pareto_type1", "deterministic")
CORRELATIONS = ("identical", "iid")
POLICY_KINDS = ("rerouting", "replication", "zero_redundancy", "full_redundancy")
KNOWLEDGE = ("unknown", "partly_known", "known")
KS_RULES = ("constant", "rational", "rational_floor", "best")

_PROB_TOL = 1e-12


class ScenarioError(ValueError):
    """Raised when a scenario or policy violates its invariants.

    ``errors`` holds one message per violated invariant.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# Size model
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeModel:
    """Marginal job size distribution plus the replica dependence structure.

    ``mean`` parametrizes the exponential and deterministic families.  The
    Pareto type I family has minimum value 1 and is parametrized by ``index``;
    its mean ``index / (index - 1)`` is derived.
    """

    family: str
    mean: float | None = None
    index: float | None = None
    correlation: str = "identical"

    @classmethod
    def exponential(cls, mean, correlation="identical"):
        return cls("exponential", mean=float(mean), correlation=correlation)

    @classmethod
    def deterministic(cls, value, correlation="identical"):
        return cls("deterministic", mean=float(value), correlation=correlation)

    @classmethod
    def pareto(cls, index=None, mean=None, correlation="identical"):
        """Pareto type I with minimum 1, given either the tail index or the mean."""
        if (index is None) == (mean is None):
            raise ScenarioError("pareto needs exactly one of index or mean")
        if index is None:
            if mean <= 1:
                raise ScenarioError(f"pareto mean must exceed the minimum 1, got {mean}")
            index = mean / (mean - 1.0)
        return cls("pareto_type1", index=float(index), correlation=correlation)

    def with_correlation(self, correlation):
        return SizeModel(self.family, self.mean, self.index, correlation)

    @property
    def expected(self) -> float:
        """E[X]."""
        if self.family == "pareto_type1":
            a = self.index
            return a / (a - 1.0) if a > 1 else INF
        return self.mean

    def errors(self):
        out = []
        if self.family not in SIZE_FAMILIES:
            out.append(f"unknown size family {self.family!r}")
        if self.correlation not in CORRELATIONS:
            out.append(f"unknown correlation {self.correlation!r}")
        if self.family in ("exponential", "deterministic"):
            if self.mean is None or not (0 < self.mean < INF):
                out.append(f"{self.family} mean must be positive and finite, got {self.mean}")
        elif self.family == "pareto_type1":
            if self.index is None or not (self.index > 1):
                out.append(f"pareto index must exceed 1 for a finite mean, got {self.index}")
        return out

    # -- distribution primitives (used by functionals, oracle, sim) --------

    def survival(self, c: float) -> float:
        """P(X > c)."""
        if math.isinf(c):
            return 0.0
        if self.family == "exponential":
            return 1.0 if c <= 0 else math.exp(-c / self.mean)
        if self.family == "pareto_type1":
            return 1.0 if c < 1.0 else c ** (-self.index)
        return 1.0 if self.mean > c else 0.0

    def incomplete(self, m: int, a: float, b: float = INF) -> float:
        """E[X^m 1{a < X <= b}] in closed form; may return ``inf`` for m >= index."""
        a = max(a, 0.0)
        if not b > a:
            return 0.0
        if self.family == "exponential":
            # lower form near zero, upper form in the tail: each avoids cancellation
            scale = self.mean ** m * math.factorial(m)
            if b <= self.mean:
                return scale * float(special.gammainc(m + 1, b / self.mean) - special.gammainc(m + 1, a / self.mean))
            return self._exp_upper(m, a) - self._exp_upper(m, b)
        if self.family == "deterministic":
            v = self.mean
            return v ** m if a < v <= b else 0.0
        alpha = self.index
        lo, hi = max(a, 1.0), max(b, 1.0)
        if not hi > lo:
            return 0.0
        if m == 0:
            return lo ** (-alpha) - (0.0 if math.isinf(hi) else hi ** (-alpha))
        if math.isclose(m, alpha, rel_tol=0, abs_tol=1e-15):
            return INF if math.isinf(hi) else alpha * math.log(hi / lo)
        e = m - alpha
        if math.isinf(hi):
            return INF if e >= 0 else alpha / (alpha - m) * lo ** e
        return alpha / (alpha - m) * (lo ** e - hi ** e)

    def _exp_upper(self, m, a):
        # E[X^m 1{X > a}] = mu^m m! Q(m + 1, a / mu)
        if math.isinf(a):
            return 0.0
        return self.mean ** m * math.factorial(m) * float(special.gammaincc(m + 1, a / self.mean))

    def moment(self, m: int) -> float:
        return self.incomplete(m, 0.0, INF) if m else 1.0

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.family == "exponential":
            return rng.exponential(self.mean, size)
        if self.family == "pareto_type1":
            # numpy's pareto is Lomax; shifting by 1 gives type I with minimum 1
            return rng.pareto(self.index, size) + 1.0
        return np.full(size, self.mean)

    def sample_pair(self, rng: np.random.Generator, size) -> tuple[np.ndarray, np.ndarray]:
        """Draw (X_1, X_2) according to the replica correlation."""
        x1 = self.sample(rng, size)
        if self.correlation == "identical":
            return x1, x1
        return x1, self.sample(rng, size)


# --------------------------------------------------------------------------
# Scenario
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class JobType:
    probability: float
    speeds: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "probability", float(self.probability))
        object.__setattr__(self, "speeds", tuple(float(r) for r in self.speeds))


@dataclass(frozen=True)
class ConfusionMatrix:
    """Row j holds P(believed type j* | true type j)."""

    entries: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(tuple(float(v) for v in row) for row in self.entries))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.entries, dtype=float)

    @classmethod
    def symmetric(cls, p_correct: float, n_types: int = 2):
        """Label is correct w.p. ``p_correct``, otherwise uniform over the other types."""
        off = (1.0 - p_correct) / (n_types - 1)
        rows = [[p_correct if a == b else off for b in range(n_types)] for a in range(n_types)]
        return cls(tuple(map(tuple, rows)))

    @classmethod
    def identity(cls, n_types: int):
        return cls.symmetric(1.0, n_types)

    def errors(self, n_types=None):
        out = []
        if n_types is not None and (len(self.entries) != n_types
                                    or any(len(r) != n_types for r in self.entries)):
            out.append(f"confusion matrix must be {n_types}x{n_types}")
        for j, row in enumerate(self.entries):
            if any(not (0.0 <= v <= 1.0) for v in row):
                out.append(f"confusion row {j} has entries outside [0, 1]")
            s = math.fsum(row)
            if abs(s - 1.0) > _PROB_TOL:
                out.append(f"confusion row {j} sums to {s:.12g}, not 1")
        return out


@dataclass(frozen=True)
class Scenario:
    pool_sizes: tuple[int, int]
    job_types: tuple[JobType, ...]
    size_model: SizeModel
    confusion: ConfusionMatrix | None = None

    def __post_init__(self):
        object.__setattr__(self, "pool_sizes", tuple(self.pool_sizes))
        object.__setattr__(self, "job_types", tuple(self.job_types))

    @property
    def n_types(self) -> int:
        return len(self.job_types)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([t.probability for t in self.job_types])

    @property
    def speeds(self) -> np.ndarray:
        """Array ``r[i, j]``: speed of type j on pool i (shape 2 x J)."""
        return np.array([t.speeds for t in self.job_types], dtype=float).T

    @property
    def correlation(self) -> str:
        return self.size_model.correlation

    def replace(self, **changes) -> "Scenario":
        fields = dict(pool_sizes=self.pool_sizes, job_types=self.job_types,
                      size_model=self.size_model, confusion=self.confusion)
        fields.update(changes)
        return Scenario(**fields)


def two_type(r_slow, p1=0.5, pools=(5, 5), size_model=None, p_correct=None):
    """Symmetric two-type scenario: speeds (1, r_slow) and (r_slow, 1).

    This is the workhorse configuration of every stability figure.
    ``p_correct`` attaches a symmetric confusion matrix when given.
    """
    if size_model is None:
        size_model = SizeModel.exponential(sum(pools))
    types = (JobType(p1, (1.0, r_slow)), JobType(1.0 - p1, (r_slow, 1.0)))
    conf = None if p_correct is None else ConfusionMatrix.symmetric(p_correct, 2)
    return Scenario(tuple(pools), types, size_model, conf)


def validate(scenario: Scenario) -> Scenario:
    """Return ``scenario`` unchanged if every invariant holds.

    Raises :class:`ScenarioError` listing every violated invariant otherwise.
    """
    errs = []
    if len(scenario.pool_sizes) != 2:
        errs.append("exactly two pools are supported")
    for i, n in enumerate(scenario.pool_sizes):
        if int(n) != n or n < 1:
            errs.append(f"pool {i + 1} size must be a positive integer, got {n}")
    if not scenario.job_types:
        errs.append("at least one job type is required")
    probs = [t.probability for t in scenario.job_types]
    for j, t in enumerate(scenario.job_types):
        if not (0.0 < t.probability <= 1.0):
            errs.append(f"type {j + 1} probability must lie in (0, 1], got {t.probability}")
        if len(t.speeds) != 2:
            errs.append(f"type {j + 1} needs one speed per pool")
        for i, r in enumerate(t.speeds):
            if not (0.0 < r < INF):
                errs.append(f"type {j + 1} speed on pool {i + 1} must be positive and finite, got {r}")
    if probs and abs(math.fsum(probs) - 1.0) > _PROB_TOL:
        errs.append(f"probabilities sum to {math.fsum(probs):.12g}, not 1")
    errs.extend(scenario.size_model.errors())
    if scenario.confusion is not None:
        errs.extend(scenario.confusion.errors(scenario.n_types))
    if errs:
        raise ScenarioError(errs)
    return scenario


# --------------------------------------------------------------------------
# Policies
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AssignmentMatrix:
    """Fractions ``alpha[i][j]`` of type-j jobs initially sent to pool i.

    ``provenance`` records how the matrix was built; ``q`` keeps the pool-1
    fractions it was built from (scalar for ``uniform``, per believed type for
    ``from_labels``, per true type for ``known``).
    """

    alpha: tuple[tuple[float, ...], tuple[float, ...]]
    provenance: str = "explicit"
    q: tuple[float, ...] | float | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(tuple(float(v) for v in row) for row in self.alpha))
        if isinstance(self.q, (list, np.ndarray)):
            object.__setattr__(self, "q", tuple(float(v) for v in self.q))

    @property
    def array(self) -> np.ndarray:
        return np.array(self.alpha, dtype=float)

    @classmethod
    def from_pool1(cls, alpha1, provenance="explicit", q=None):
        alpha1 = [float(a) for a in alpha1]
        return cls((tuple(alpha1), tuple(1.0 - a for a in alpha1)), provenance, q)

    def errors(self, n_types=None):
        out = []
        a = self.array
        if a.ndim != 2 or a.shape[0] != 2:
            return ["assignment must have two rows"]
        if n_types is not None and a.shape[1] != n_types:
            out.append(f"assignment must have {n_types} columns")
        if np.any(a < 0) or np.any(a > 1):
            out.append("assignment entries must lie in [0, 1]")
        if np.any(np.abs(a.sum(axis=0) - 1.0) > 1e-12):
            out.append("assignment columns must sum to 1")
        return out


def effective_assignment(scenario: Scenario, q, knowledge: str = "unknown") -> AssignmentMatrix:
    """Turn pool-1 fractions into the assignment matrix of a knowledge regime.

    * ``unknown``: ``q`` is a scalar and every type is split the same way.
    * ``partly_known``: ``q[j*]`` is the pool-1 fraction for jobs labelled j*;
      ``alpha_1j = sum_j* P(j -> j*) q[j*]``.
    * ``known``: ``q[j]`` is the pool-1 fraction of true type j.
    """
    J = scenario.n_types
    if knowledge == "unknown":
        qv = float(np.asarray(q, dtype=float).reshape(-1)[0]) if np.ndim(q) else float(q)
        if not 0.0 <= qv <= 1.0:
            raise ScenarioError(f"q must lie in [0, 1], got {qv}")
        return AssignmentMatrix.from_pool1([qv] * J, "uniform", qv)
    qs = np.asarray(q, dtype=float).reshape(-1)
    if qs.size == 1:
        qs = np.repeat(qs, J)
    if qs.size != J:
        raise ScenarioError(f"q needs {J} entries, got {qs.size}")
    if np.any(qs < 0) or np.any(qs > 1):
        raise ScenarioError("q entries must lie in [0, 1]")
    if knowledge == "known":
        return AssignmentMatrix.from_pool1(qs, "known", tuple(qs))
    if knowledge == "partly_known":
        if scenario.confusion is None:
            raise ScenarioError("partly known job types need a confusion matrix")
        alpha1 = scenario.confusion.array @ qs
        return AssignmentMatrix.from_pool1(np.clip(alpha1, 0.0, 1.0), "from_labels", tuple(qs))
    raise ScenarioError(f"unknown knowledge regime {knowledge!r}")


@dataclass(frozen=True)
class ThresholdVector:
    tau: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))

    def errors(self):
        if len(self.tau) != 2:
            return ["threshold vector needs one value per pool"]
        return [f"threshold tau_{i + 1} must be >= 0" for i, t in enumerate(self.tau) if not t >= 0]


@dataclass(frozen=True)
class ThresholdMatrix:
    """Row i lists the successive rerouting limits of jobs that start in pool i."""

    rows: tuple[tuple[float, ...], tuple[float, ...]]

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(tuple(float(t) for t in row) for row in self.rows))

    @property
    def n(self) -> int:
        return len(self.rows[0])

    def errors(self):
        out = []
        if len(self.rows) != 2:
            out.append("threshold matrix needs two rows")
        elif len(self.rows[0]) != len(self.rows[1]) or not self.rows[0]:
            out.append("threshold matrix rows must be non-empty and of equal length")
        if any(not t >= 0 for row in self.rows for t in row):
            out.append("threshold matrix entries must be >= 0")
        return out


@dataclass(frozen=True)
class KnownSizesRule:
    """How thresholds are chosen when job sizes are known on arrival.

    * ``constant``: the policy thresholds for every job (reduces to the
      unknown-sizes policy).
    * ``rational``: pool i uses the ``order[i]``-th smallest completion time
      ``x_i / r_ij`` over the job types.
    * ``rational_floor``: each policy threshold is rounded down, per job, to
      the largest rational time point not exceeding it (0 included).
    * ``best``: per job and pool, the candidate in {0, rational points, inf}
      minimizing ``weight * b_1 / n_1 + (1 - weight) * b_2 / n_2``.
    """

    rule: str = "constant"
    order: tuple[int, int] = (1, 1)
    weight: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "order", tuple(int(o) for o in self.order))
        object.__setattr__(self, "weight", float(self.weight))

    def errors(self, n_types=None):
        out = []
        if self.rule not in KS_RULES:
            out.append(f"unknown known-sizes rule {self.rule!r}")
        if self.rule == "rational":
            if n_types is not None and n_types < 2:
                out.append("rational rule needs at least two job types")
            if any(o < 1 for o in self.order):
                out.append("rational order statistics must be >= 1")
            if n_types is not None and any(o > n_types - 1 for o in self.order):
                out.append(f"rational order statistics must be <= J-1 = {n_types - 1}")
        if not 0.0 <= self.weight <= 1.0:
            out.append("rule weight must lie in [0, 1]")
        return out


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    assignment: AssignmentMatrix
    thresholds: ThresholdVector | ThresholdMatrix = field(default_factory=lambda: ThresholdVector((INF, INF)))
    carry_over: bool = False
    known_sizes_rule: KnownSizesRule | None = None

    @classmethod
    def zero(cls, assignment):
        return cls("zero_redundancy", assignment, ThresholdVector((INF, INF)))

    @classmethod
    def full(cls, assignment):
        return cls("full_redundancy", assignment, ThresholdVector((0.0, 0.0)))

    @property
    def tau(self) -> tuple[float, float]:
        if isinstance(self.thresholds, ThresholdMatrix):
            raise TypeError("multi-threshold policy has no single threshold vector")
        return self.thresholds.tau

    @property
    def redundancy_kind(self) -> str:
        """'rerouting' or 'replication' dynamics behind this policy."""
        if self.kind == "full_redundancy":
            return "replication"
        if self.kind == "zero_redundancy":
            return "rerouting"
        return self.kind

    def errors(self, n_types=None):
        out = []
        if self.kind not in POLICY_KINDS:
            return [f"unknown policy kind {self.kind!r}"]
        out.extend(self.assignment.errors(n_types))
        out.extend(self.thresholds.errors())
        multi = isinstance(self.thresholds, ThresholdMatrix)
        if multi and self.kind != "rerouting":
            out.append("multi-threshold matrices are only defined for rerouting")
        if not multi:
            tau = self.thresholds.tau
            if self.kind == "zero_redundancy" and not all(math.isinf(t) for t in tau):
                out.append("zero redundancy requires infinite thresholds")
            if self.kind == "full_redundancy" and any(t != 0 for t in tau):
                out.append("full redundancy requires zero thresholds")
        if self.carry_over and self.kind not in ("rerouting", "replication"):
            out.append("carry-over only applies to rerouting or replication")
        if self.known_sizes_rule is not None:
            out.extend(self.known_sizes_rule.errors(n_types))
            if multi:
                out.append("known-sizes rules apply to single-threshold policies only")
        return out


def validate_policy(policy: PolicySpec, scenario: Scenario | None = None) -> PolicySpec:
    errs = policy.errors(None if scenario is None else scenario.n_types)
    if errs:
        raise ScenarioError(errs)
    return policy


# --------------------------------------------------------------------------
# JSON files
# --------------------------------------------------------------------------

def _enc_tau(t):
    return "inf" if math.isinf(t) else t


def _dec_tau(v, where):
    if isinstance(v, str):
        if v.strip().lower() in ("inf", "infinity"):
            return INF
        raise ScenarioError(f"{where}: threshold string must be 'inf', got {v!r}")
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}: threshold must be a number or 'inf', got {v!r}")
    return float(v)


def size_model_to_dict(sm: SizeModel) -> dict:
    d = {"family": sm.family, "correlation": sm.correlation}
    if sm.family == "pareto_type1":
        d["index"] = sm.index
    else:
        d["mean"] = sm.mean
    return d


def scenario_to_dict(scenario: Scenario) -> dict:
    d = {
        "pools": list(scenario.pool_sizes),
        "types": [{"p": t.probability, "r": list(t.speeds)} for t in scenario.job_types],
        "size": size_model_to_dict(scenario.size_model),
    }
    if scenario.confusion is not None:
        d["confusion"] = [list(r) for r in scenario.confusion.entries]
    return d


def policy_to_dict(policy: PolicySpec) -> dict:
    a = policy.assignment
    d: dict = {"kind": policy.kind}
    if a.provenance == "uniform":
        d["knowledge"], d["q"] = "unknown", a.q
    elif a.provenance == "from_labels":
        d["knowledge"], d["q_per_type"] = "partly_known", list(a.q)
    elif a.provenance == "known":
        d["knowledge"], d["q_per_type"] = "known", list(a.q)
    else:
        d["alpha"] = [list(r) for r in a.alpha]
    if isinstance(policy.thresholds, ThresholdMatrix):
        d["tau_matrix"] = [[_enc_tau(t) for t in row] for row in policy.thresholds.rows]
    else:
        d["tau"] = [_enc_tau(t) for t in policy.thresholds.tau]
    if policy.carry_over:
        d["carry_over"] = True
    r = policy.known_sizes_rule
    if r is not None:
        d["known_sizes"] = {"rule": r.rule, "order": list(r.order), "weight": r.weight}
    return d


def scenario_from_dict(d: dict) -> Scenario:
    def need(obj, key, where):
        if key not in obj:
            raise ScenarioError(f"{where}: missing field {key!r}")
        return obj[key]

    pools = need(d, "pools", "scenario")
    types = []
    for j, t in enumerate(need(d, "types", "scenario")):
        where = f"types[{j}]"
        types.append(JobType(float(need(t, "p", where)), tuple(need(t, "r", where))))
    s = need(d, "size", "scenario")
    fam = need(s, "family", "size")
    corr = s.get("correlation", "identical")
    if fam == "pareto_type1":
        if "index" in s:
            sm = SizeModel.pareto(index=float(s["index"]), correlation=corr)
        else:
            sm = SizeModel.pareto(mean=float(need(s, "mean", "size")), correlation=corr)
    elif fam in ("exponential", "deterministic"):
        sm = SizeModel(fam, mean=float(need(s, "mean", "size")), correlation=corr)
    else:
        raise ScenarioError(f"size.family: unknown family {fam!r}")
    conf = d.get("confusion")
    conf = None if conf is None else ConfusionMatrix(tuple(tuple(r) for r in conf))
    return validate(Scenario(tuple(int(n) for n in pools), tuple(types), sm, conf))


def policy_from_dict(d: dict, scenario: Scenario, where="policy") -> PolicySpec:
    kind = d.get("kind")
    if kind not in POLICY_KINDS:
        raise ScenarioError(f"{where}.kind: unknown policy kind {kind!r}")
    if "alpha" in d:
        assignment = AssignmentMatrix(tuple(tuple(r) for r in d["alpha"]))
    else:
        knowledge = d.get("knowledge", "unknown")
        if knowledge not in KNOWLEDGE:
            raise ScenarioError(f"{where}.knowledge: unknown regime {knowledge!r}")
        q = d.get("q_per_type", d.get("q", 0.5))
        assignment = effective_assignment(scenario, q, knowledge)
    if "tau_matrix" in d:
        rows = [[_dec_tau(v, f"{where}.tau_matrix") for v in row] for row in d["tau_matrix"]]
        thresholds = ThresholdMatrix(tuple(map(tuple, rows)))
    else:
        default = {"zero_redundancy": ["inf", "inf"], "full_redundancy": [0, 0]}.get(kind)
        tau = d.get("tau", default)
        if tau is None:
            raise ScenarioError(f"{where}: missing field 'tau'")
        thresholds = ThresholdVector(tuple(_dec_tau(v, f"{where}.tau") for v in tau))
    rule = None
    if "known_sizes" in d:
        k = d["known_sizes"]
        rule = KnownSizesRule(k.get("rule", "constant"), tuple(k.get("order", (1, 1))), k.get("weight", 0.5))
    policy = PolicySpec(kind, assignment, thresholds, bool(d.get("carry_over", False)), rule)
    errs = policy.errors(scenario.n_types)
    if errs:
        raise ScenarioError([f"{where}: {e}" for e in errs])
    return policy


def load_scenario_file(path) -> tuple[Scenario, list[PolicySpec]]:
    """Read a scenario file and the policies it lists (possibly none)."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    try:
        scenario = scenario_from_dict(d)
        policies = [policy_from_dict(p, scenario, f"policies[{k}]")
                    for k, p in enumerate(d.get("policies", []))]
    except ScenarioError as exc:
        raise ScenarioError([f"{path}: {e}" for e in exc.errors]) from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ScenarioError(f"{path}: malformed field ({exc})") from exc
    return scenario, policies


def dumps_scenario(scenario: Scenario, policies: Sequence[PolicySpec] = ()) -> str:
    d = scenario_to_dict(scenario)
    if policies:
        d["policies"] = [policy_to_dict(p) for p in policies]
    return json.dumps(d, indent=2)


def save_scenario_file(path, scenario: Scenario, policies: Sequence[PolicySpec] = ()) -> None:
    Path(path).write_text(dumps_scenario(scenario, policies) + "\n", encoding="utf-8")
