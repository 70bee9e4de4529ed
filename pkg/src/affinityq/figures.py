"""Named figure sweeps: scenario templates, axes and the CSV they produce.

Stability figures sweep one scenario parameter and report the optimized
lambda_max per policy family.  Latency figures sweep the arrival rate on a
single-server-per-pool scenario and report exact M/G/1 values where they
exist, simulated latencies of the approximation-optimized policies, and the
approximations themselves.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .latency import InfiniteMomentError, UnstableError, latency_policy, latency_replication, optimize_latency
from .model import (INF, PolicySpec, Scenario, ScenarioError, SizeModel, ThresholdVector, dumps_scenario,
                    effective_assignment, scenario_to_dict, two_type)
from .stability import STABILITY_COLUMNS, GridSpec, SweepTable, scenario_hash, sweep

LATENCY_COLUMNS = ("KT", "Rep", "FRed", "Rer", "ZRed", "RepApprox", "RerApprox")


def _grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 10) for k in range(n + 1)]


R_SLOW = _grid(0.05, 1.0, 0.05)
P_1 = _grid(0.05, 0.95, 0.05)
P_CONFUSION = _grid(0.5, 1.0, 0.05)
LAMBDA = _grid(0.05, 0.95, 0.05)


@dataclass(frozen=True)
class Figure:
    name: str
    kind: str  # "stability" or "latency"
    template: Scenario
    axis: str
    values: tuple
    note: str
    fixed_replication_tau: float | None = None  # latency figures only

    def params(self) -> dict:
        d = {"figure": self.name, "kind": self.kind, "axis": self.axis, "values": list(self.values),
             "note": self.note}
        if self.fixed_replication_tau is not None:
            d["fixed_replication_tau"] = self.fixed_replication_tau
        return d


def _exp(corr):
    return SizeModel.exponential(10.0, corr)


def _pareto(corr):
    # minimum 1, index N/(N-1): mean N = 10
    return SizeModel.pareto(index=10.0 / 9.0, correlation=corr)


def _stability_figures():
    out = []
    for prefix, sizes in (("fig", _exp), ("figA", _pareto)):
        label = "exponential" if prefix == "fig" else "pareto"
        n2, n3, n4, n5 = ("2", "3", "4", "5") if prefix == "fig" else ("7", "8", "9", "10")
        ident, iid = sizes("identical"), sizes("iid")
        out += [
            Figure(f"{prefix}{n2}l", "stability", two_type(0.1, size_model=ident), "p_1", tuple(P_1),
                   f"identical {label} sizes, r_slow=0.1, varying p_1"),
            Figure(f"{prefix}{n2}r", "stability", two_type(0.1, size_model=ident), "r_slow", tuple(R_SLOW),
                   f"identical {label} sizes, p_1=0.5, varying r_slow"),
            Figure(f"{prefix}{n3}", "stability", two_type(0.1, size_model=iid), "r_slow", tuple(R_SLOW),
                   f"iid {label} sizes, p_1=0.5, varying r_slow"),
        ]
        for side, r in (("l", 0.1), ("r", 0.6)):
            out.append(Figure(f"{prefix}{n4}{side}", "stability", two_type(r, size_model=ident, p_correct=0.5),
                              "p_confusion", tuple(P_CONFUSION),
                              f"identical {label} sizes, r_slow={r}, varying p_1->1 = p_2->2"))
        for side, r in (("l", 0.1), ("r", 0.6)):
            out.append(Figure(f"{prefix}{n5}{side}", "stability", two_type(r, size_model=iid, p_correct=0.5),
                              "p_confusion", tuple(P_CONFUSION),
                              f"iid {label} sizes, r_slow={r}, varying p_1->1 = p_2->2"))
    return out


def _latency_figures():
    det = SizeModel.deterministic(1.0)
    exp = SizeModel.exponential(1.0)
    return [
        Figure("fig6l", "latency", two_type(0.1, pools=(1, 1), size_model=det), "lambda", tuple(LAMBDA),
               "n=(1,1), r_slow=0.1, deterministic sizes of mean 1, replication simulated at tau=(1,1)",
               fixed_replication_tau=1.0),
        Figure("fig6r", "latency", two_type(0.1, pools=(1, 1), size_model=exp), "lambda", tuple(LAMBDA),
               "n=(1,1), r_slow=0.1, exponential sizes of mean 1"),
    ]


FIGURES = {f.name: f for f in _stability_figures() + _latency_figures()}
# a bare name selects every panel of that figure
ALIASES = {}
for _name in FIGURES:
    if _name[-1] in "lr":
        ALIASES.setdefault(_name[:-1], []).append(_name)


def resolve(name: str) -> list[str]:
    if name in FIGURES:
        return [name]
    if name in ALIASES:
        return list(ALIASES[name])
    raise ScenarioError(f"unknown figure {name!r}; known: {', '.join(sorted(set(FIGURES) | set(ALIASES)))}")


def run_figure(name: str, grid: GridSpec | None = None, seed: int = 0, arrivals: int = 200_000,
               values=None) -> SweepTable:
    fig = FIGURES[name]
    grid = grid or GridSpec()
    values = tuple(fig.values if values is None else values)
    meta = {"figure": fig.name, "scenario": json.dumps(scenario_to_dict(fig.template), sort_keys=True),
            "note": fig.note}
    if fig.kind == "stability":
        table = sweep(fig.template, fig.axis, values, STABILITY_COLUMNS, grid=grid, metadata=meta)
        # put the figure name first in the header comment
        table.metadata = {"figure": fig.name, **table.metadata}
        return table
    return _latency_table(fig, values, grid, seed, arrivals, meta)


def _safe(f):
    try:
        return f()
    except (UnstableError, InfiniteMomentError):
        return INF


def _latency_table(fig, lams, grid, seed, arrivals, meta):
    from . import __version__
    from .sim import SimConfig, run

    sc = fig.template
    cols = {c: [] for c in LATENCY_COLUMNS}
    uniform = effective_assignment(sc, 0.5, "unknown")
    for k, lam in enumerate(lams):
        # no-redundancy columns are exact M/G/1 values, which needs the per-pool type mix
        cols["KT"].append(_safe(lambda: optimize_latency(sc, "zero", lam, grid, "known", conditioned=True).best_value))
        cols["FRed"].append(_safe(lambda: latency_replication(sc, uniform, (0.0, 0.0), lam).overall))
        cols["ZRed"].append(_safe(lambda: optimize_latency(sc, "zero", lam, grid, conditioned=True).best_value))
        for col, family, approx in (("Rep", "replication", "RepApprox"), ("Rer", "rerouting", "RerApprox")):
            try:
                if family == "replication" and fig.fixed_replication_tau is not None:
                    t = fig.fixed_replication_tau
                    pol = PolicySpec("replication", uniform, ThresholdVector((t, t)))
                    val = latency_policy(sc, pol, lam).overall
                else:
                    res = optimize_latency(sc, family, lam, grid)
                    pol, val = res.best_policy, res.best_value
            except (UnstableError, InfiniteMomentError):
                cols[col].append(INF)
                cols[approx].append(INF)
                continue
            cfg = SimConfig(sc, pol, lam, horizon=arrivals, seed=seed,
                            run_index=2 * k + (0 if family == "replication" else 1))
            rep = run(cfg)
            cols[col].append(INF if rep.unstable else rep.mean_latency)
            cols[approx].append(val)
    meta.update({"scenario_hash": scenario_hash(sc), "axis": "lambda", "grid": json.dumps(grid.as_dict(), sort_keys=True),
                 "seed": seed, "arrivals": arrivals, "version": f"affinityq {__version__}"})
    meta = {"figure": fig.name, **meta}
    return SweepTable("lambda", [float(v) for v in lams], cols, meta)


def write_scenarios(directory) -> list[Path]:
    """One scenario file per figure panel, with the sweep it belongs to."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for fig in FIGURES.values():
        d = json.loads(dumps_scenario(fig.template))
        d["sweep"] = fig.params()
        p = directory / f"{fig.name}.json"
        p.write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
        paths.append(p)
    # short names used in the README examples
    for short, src in (("fig2", "fig2l"), ("fig6", "fig6r")):
        p = directory / f"{short}.json"
        p.write_text(dumps_scenario(FIGURES[src].template) + "\n", encoding="utf-8")
        paths.append(p)
    return paths
