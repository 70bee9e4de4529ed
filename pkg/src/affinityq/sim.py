"""Discrete-event simulation of two server pools with rerouting and replication.

Rules implemented here:

* Poisson arrivals; each job draws a true type, optionally a label through the
  confusion matrix, a starting pool from the assignment, and its size(s).
* Each pool has ``n_i`` servers and one FCFS queue.  Servers never idle while
  their queue is non-empty.
* Thresholds count processing time received at the current pool, summed over
  preemption episodes.  A job that would complete exactly at its threshold
  completes (strict indicator).
* Rerouting: the job leaves its server and joins the tail of the other pool's
  queue, needing its full requirement there (or, with carry-over, the leftover
  work).  Multi-threshold policies chain several such stages.
* Replication: the job needs one server in each pool at the same time.  It
  preempts the most recently started non-replicated job where no server is
  free; if one pool is entirely busy with replicated jobs it waits, FCFS, in a
  separate replication queue.  Preempted jobs resume at the head of their queue
  with their remaining work.  The first replica to finish cancels the other.
* A threshold of 0 acts at arrival: the job is rerouted or replicated at once.
"""
from __future__ import annotations

import csv
import heapq
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .model import INF, PolicySpec, Scenario, ScenarioError, ThresholdMatrix, validate, validate_policy

_ARRIVAL, _COMPLETE, _THRESHOLD, _REP_DONE = 0, 1, 2, 3


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    policy: PolicySpec
    lam: float
    horizon: int = 200_000  # number of arrivals
    warmup_fraction: float = 0.2
    seed: int = 0
    run_index: int = 0
    batches: int = 20
    check_invariants: bool = False
    trace_path: str | None = None
    queue_samples: int = 400

    def errors(self):
        out = []
        if not self.lam > 0:
            out.append("arrival rate must be positive")
        if self.horizon < 10 * self.batches:
            out.append("horizon must be at least 10 arrivals per batch")
        if not 0.0 <= self.warmup_fraction <= 0.5:
            out.append("warmup fraction must lie in [0, 0.5]")
        if self.batches < 2:
            out.append("need at least two batches")
        return out

    def rng(self) -> np.random.Generator:
        # independent streams per run: root seed plus run index through SeedSequence
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(self.run_index,)))


@dataclass
class SimReport:
    utilization: tuple[float, float]
    utilization_ci: tuple[float, float]
    mean_latency: float
    latency_ci: float
    per_pool_latency: tuple[float, float]
    reroute_count: int
    replicate_count: int
    preemption_count: int
    wait_after_replication_count: int
    completed: int
    arrivals: int
    batches: int
    drift_slope: float
    drift_tstat: float
    drift_growth: float
    end_in_system: int

    @property
    def unstable(self) -> bool:
        """Number in system grew significantly over the second half of the run."""
        return bool(self.drift_tstat > stats.norm.ppf(0.95) and self.drift_growth > 0.01)

    def as_dict(self):
        d = asdict(self)
        d["unstable"] = self.unstable
        return d

    def to_json(self, **kw):
        return json.dumps(self.as_dict(), **kw)


class _Job:
    __slots__ = ("id", "jtype", "x", "start_pool", "stages", "stage", "pool", "remaining", "received",
                 "limit", "version", "started", "rep", "rem_other", "size_left", "arrival", "measured")


class InvariantViolation(AssertionError):
    pass


def _t_quantile(b):
    return float(stats.t.ppf(0.975, b - 1))


def run(config: SimConfig) -> SimReport:
    errs = config.errors()
    if errs:
        raise ScenarioError(errs)
    return _Simulation(config).run()


class _Simulation:
    def __init__(self, config: SimConfig):
        self.cfg = config
        sc = validate(config.scenario)
        pol = validate_policy(config.policy, sc)
        self.sc, self.pol = sc, pol
        self.n = tuple(sc.pool_sizes)
        self.r = sc.speeds
        self.corr = sc.size_model.correlation
        self.replication = pol.redundancy_kind == "replication"
        self.carry = pol.carry_over
        if self.carry and self.corr != "identical" and sc.size_model.family != "deterministic":
            raise ScenarioError("carry-over is only defined for identical replicas")
        if isinstance(pol.thresholds, ThresholdMatrix):
            self.rows = pol.thresholds.rows
            self.tau = None
        else:
            self.rows = None
            self.tau = pol.thresholds.tau
        self.ks = None
        if pol.known_sizes_rule is not None and pol.known_sizes_rule.rule != "constant":
            from .load import KnownSizesModel
            self.ks = KnownSizesModel(sc, pol)

    # -- arrivals ---------------------------------------------------------

    def _draw(self, N, rng):
        sc, pol = self.sc, self.pol
        J = sc.n_types
        inter = rng.exponential(1.0 / self.cfg.lam, N)
        types = rng.choice(J, size=N, p=sc.probabilities)
        a = pol.assignment
        if a.provenance == "from_labels" and sc.confusion is not None:
            conf = sc.confusion.array
            u = rng.random(N)
            cum = np.cumsum(conf, axis=1)[types]
            labels = np.minimum((u[:, None] > cum).sum(axis=1), J - 1)
            q = np.asarray(a.q, dtype=float)
            pool1 = rng.random(N) < q[labels]
        else:
            pool1 = rng.random(N) < a.array[0][types]
        x1, x2 = sc.size_model.sample_pair(rng, N)
        return inter, types, np.where(pool1, 0, 1), x1, x2

    def _stages(self, s, x, j):
        o = 1 - s
        if self.rows is not None:
            lim = self.rows[s]
            st = [(s if k % 2 == 0 else o, lim[k]) for k in range(len(lim))]
            st.append((s if len(lim) % 2 == 0 else o, INF))
            return st
        if self.ks is not None:
            tau, _ = self.ks.threshold(s, x[s], x[o])
        else:
            tau = self.tau[s]
        if self.replication:
            return [(s, tau)]
        if math.isinf(tau):
            return [(s, INF)]
        return [(s, tau), (o, INF)]

    # -- main loop --------------------------------------------------------

    def run(self) -> SimReport:
        cfg = self.cfg
        N = cfg.horizon
        rng = cfg.rng()
        inter, types, pools, x1, x2 = self._draw(N, rng)
        arrival_times = np.cumsum(inter)
        n = self.n
        r = self.r
        warm = int(N * cfg.warmup_fraction)
        measured = N - warm
        B = cfg.batches

        heap = []
        seq = 0
        queues = (deque(), deque())
        running = ([], [])
        nrep = [0, 0]
        rep_queue = deque()
        counts = {"reroute": 0, "replicate": 0, "preempt": 0, "wait_rep": 0}
        area = [0.0, 0.0]
        now = 0.0
        in_system = 0
        lat_sum = np.zeros(B)
        lat_cnt = np.zeros(B)
        pool_sum = [0.0, 0.0]
        pool_cnt = [0, 0]
        completed = 0
        snaps = {}  # arrival index -> (time, area1, area2)
        boundaries = {warm + (measured * b) // B for b in range(B + 1)}
        boundaries.discard(N)
        half = N // 2
        sample_every = max(1, (N - half) // cfg.queue_samples)
        q_t, q_n = [], []
        check = cfg.check_invariants
        trace = [] if cfg.trace_path else None
        carry = self.carry
        replication = self.replication

        def push(t, kind, job, ver):
            nonlocal seq
            seq += 1
            heapq.heappush(heap, (t, 0 if kind == _ARRIVAL else 1, seq, kind, job, ver))

        def req(job, pool):
            return job.x[pool] / r[pool, job.jtype]

        def start(i, job):
            job.started = now
            running[i].append(job)
            left = job.limit - job.received
            if job.remaining <= left:
                push(now + job.remaining, _COMPLETE, job, job.version)
            else:
                push(now + left, _THRESHOLD, job, job.version)
            if trace is not None:
                trace.append((now, job.id, "start", i + 1))

        def stop(i, job):
            el = now - job.started
            job.remaining -= el
            job.received += el
            running[i].remove(job)
            job.version += 1

        def dispatch(i):
            q = queues[i]
            run_i = running[i]
            while q and len(run_i) + nrep[i] < n[i]:
                start(i, q.popleft())

        def start_replicated():
            while rep_queue and nrep[0] < n[0] and nrep[1] < n[1]:
                job = rep_queue.popleft()
                for i in (0, 1):
                    if len(running[i]) + nrep[i] >= n[i]:
                        victim = running[i][-1]
                        stop(i, victim)
                        queues[i].appendleft(victim)
                        counts["preempt"] += 1
                        if trace is not None:
                            trace.append((now, victim.id, "preempt", i + 1))
                    nrep[i] += 1
                job.started = now
                push(now + min(job.remaining, job.rem_other), _REP_DONE, job, job.version)
                if trace is not None:
                    trace.append((now, job.id, "replicated_start", 0))

        def replicate(job, from_service):
            counts["replicate"] += 1
            s = job.pool
            o = 1 - s
            job.rep = True
            if carry:
                job.rem_other = (job.x[s] - r[s, job.jtype] * job.received) / r[o, job.jtype]
            else:
                job.rem_other = req(job, o)
            rep_queue.append(job)
            start_replicated()
            if from_service and rep_queue and rep_queue[-1] is job:
                counts["wait_rep"] += 1
            if trace is not None:
                trace.append((now, job.id, "replicate", s + 1))

        def enter_stage(job):
            # thresholds of 0 act immediately
            while job.limit <= 0 and job.stage < len(job.stages) - 1:
                advance(job)
            queues[job.pool].append(job)

        def advance(job):
            counts["reroute"] += 1
            old = job.pool
            if carry:
                job.size_left -= r[old, job.jtype] * job.received
            job.stage += 1
            job.pool, job.limit = job.stages[job.stage]
            if carry:
                job.remaining = job.size_left / r[job.pool, job.jtype]
            else:
                job.remaining = req(job, job.pool)
            job.received = 0.0
            if trace is not None:
                trace.append((now, job.id, "reroute", job.pool + 1))

        def finish(job):
            nonlocal completed, in_system
            completed += 1
            in_system -= 1
            if job.measured:
                T = now - job.arrival
                b = ((job.id - warm) * B) // measured
                lat_sum[b] += T
                lat_cnt[b] += 1
                pool_sum[job.start_pool] += T
                pool_cnt[job.start_pool] += 1
            if trace is not None:
                trace.append((now, job.id, "complete", job.pool + 1))

        next_arrival = 0
        if N:
            push(arrival_times[0], _ARRIVAL, None, 0)
        while heap:
            t, _, _, kind, job, ver = heapq.heappop(heap)
            dt = t - now
            if dt > 0:
                area[0] += (len(running[0]) + nrep[0]) * dt
                area[1] += (len(running[1]) + nrep[1]) * dt
                now = t
            if kind == _ARRIVAL:
                k = next_arrival
                next_arrival += 1
                if k in boundaries:
                    snaps[k] = (now, area[0], area[1])
                if k >= half and (k - half) % sample_every == 0:
                    q_t.append(now)
                    q_n.append(in_system)
                job = _Job()
                job.id = k
                j = int(types[k])
                s = int(pools[k])
                job.jtype = j
                job.x = (float(x1[k]), float(x2[k]))
                job.start_pool = s
                job.stages = self._stages(s, job.x, j)
                job.stage = 0
                job.pool, job.limit = job.stages[0]
                job.remaining = req(job, s)
                job.received = 0.0
                job.version = 0
                job.rep = False
                job.size_left = job.x[s]
                job.arrival = now
                job.measured = k >= warm
                in_system += 1
                if trace is not None:
                    trace.append((now, k, "arrival", s + 1))
                if replication and job.limit <= 0:
                    replicate(job, False)
                    dispatch(0)
                    dispatch(1)
                else:
                    enter_stage(job)
                    dispatch(job.pool)
                if next_arrival < N:
                    push(arrival_times[next_arrival], _ARRIVAL, None, 0)
                else:
                    snaps[N] = (now, area[0], area[1])
            elif kind == _REP_DONE:
                nrep[0] -= 1
                nrep[1] -= 1
                finish(job)
                start_replicated()
                dispatch(0)
                dispatch(1)
            else:
                if ver != job.version:
                    continue
                i = job.pool
                stop(i, job)
                if kind == _COMPLETE:
                    finish(job)
                    dispatch(i)
                elif replication:
                    replicate(job, True)
                    dispatch(0)
                    dispatch(1)
                else:
                    advance(job)
                    enter_stage(job)
                    dispatch(i)
                    dispatch(job.pool)
            if check:
                self._check(queues, running, nrep, rep_queue)

        if trace is not None:
            with open(cfg.trace_path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(["time", "job", "event", "pool"])
                w.writerows(trace)
        return self._report(snaps, warm, measured, B, lat_sum, lat_cnt, pool_sum, pool_cnt,
                            counts, completed, q_t, q_n, in_system)

    def _check(self, queues, running, nrep, rep_queue):
        for i in (0, 1):
            busy = len(running[i]) + nrep[i]
            if busy > self.n[i]:
                raise InvariantViolation(f"pool {i + 1} has {busy} busy servers")
            if queues[i] and busy < self.n[i]:
                raise InvariantViolation(f"pool {i + 1} idles a server while its queue is non-empty")
            for job in running[i]:
                if job.remaining < -1e-9:
                    raise InvariantViolation("job served beyond its requirement")
        if nrep[0] != nrep[1]:
            raise InvariantViolation("replicated job in service in one pool only")
        if rep_queue and nrep[0] < self.n[0] and nrep[1] < self.n[1]:
            raise InvariantViolation("replicated job waits although both pools could serve it")

    def _report(self, snaps, warm, measured, B, lat_sum, lat_cnt, pool_sum, pool_cnt,
                counts, completed, q_t, q_n, in_system):
        edges = sorted(snaps)
        marks = [warm + (measured * b) // B for b in range(B + 1)]
        marks[-1] = max(edges)
        util = np.zeros((B, 2))
        for b in range(B):
            t0, a10, a20 = snaps[marks[b]]
            t1, a11, a21 = snaps[marks[b + 1]]
            span = max(t1 - t0, 1e-300)
            util[b] = ((a11 - a10) / (self.n[0] * span), (a21 - a20) / (self.n[1] * span))
        # overall utilization uses the whole window, batches only for the CI
        t0, a10, a20 = snaps[marks[0]]
        t1, a11, a21 = snaps[marks[-1]]
        span = max(t1 - t0, 1e-300)
        u = ((a11 - a10) / (self.n[0] * span), (a21 - a20) / (self.n[1] * span))
        tq = _t_quantile(B)
        u_ci = tuple(float(tq * util[:, i].std(ddof=1) / math.sqrt(B)) for i in (0, 1))
        ok = lat_cnt > 0
        means = lat_sum[ok] / lat_cnt[ok]
        mean_lat = float(lat_sum.sum() / max(lat_cnt.sum(), 1))
        lat_ci = float(tq * means.std(ddof=1) / math.sqrt(len(means))) if len(means) > 1 else INF
        per_pool = tuple(pool_sum[i] / pool_cnt[i] if pool_cnt[i] else float("nan") for i in (0, 1))
        slope, tstat, growth = _drift(q_t, q_n, self.cfg.horizon)
        return SimReport(tuple(float(v) for v in u), u_ci, mean_lat, lat_ci, per_pool,
                         counts["reroute"], counts["replicate"], counts["preempt"], counts["wait_rep"],
                         completed, self.cfg.horizon, B, slope, tstat, growth, in_system)


def _drift(t, nsys, horizon):
    """Least-squares slope of the number in system over the second half."""
    if len(t) < 3:
        return 0.0, 0.0, 0.0
    res = stats.linregress(np.asarray(t), np.asarray(nsys, dtype=float))
    se = res.stderr if res.stderr > 0 else INF
    growth = res.slope * (t[-1] - t[0]) / max(horizon / 2, 1)
    return float(res.slope), float(res.slope / se), float(growth)


def estimate_lambda_max(config: SimConfig, lo=0.0, hi=None, resolution=0.01, max_doublings=12):
    """Bisection for the largest arrival rate at which the run shows no upward drift.

    ``hi`` defaults to doubling from the config's arrival rate until a run
    looks unstable.  Returns (estimate, list of (lam, unstable) probes).
    """
    probes = []

    def unstable(lam):
        rep = run(replace(config, lam=lam))
        probes.append((lam, rep.unstable))
        return rep.unstable

    if hi is None:
        hi = config.lam
        for _ in range(max_doublings):
            if unstable(hi):
                break
            lo, hi = hi, hi * 2.0
        else:
            return INF, probes
    while (hi - lo) > resolution * hi:
        mid = 0.5 * (lo + hi)
        if unstable(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi), probes
