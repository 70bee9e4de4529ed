"""Mean latency: the M/G/1 approximation against simulation on one server per pool."""
from affinityq.latency import latency_policy, optimize_latency
from affinityq.load import load_policy
from affinityq.model import INF, PolicySpec, SizeModel, ThresholdVector, effective_assignment, two_type
from affinityq.sim import SimConfig, run

sc = two_type(0.1, pools=(1, 1), size_model=SizeModel.exponential(1.0))
A = effective_assignment(sc, 0.5)

# exact at the extremes, approximate in between
for kind, tau in (("replication", (0.0, 0.0)), ("replication", (INF, INF)), ("replication", (1.0, 1.0))):
    pol = PolicySpec(kind, A, ThresholdVector(tau))
    lam = 0.5 * load_policy(sc, pol).lambda_max
    approx = latency_policy(sc, pol, lam).overall
    sim = run(SimConfig(sc, pol, lam, horizon=300_000, seed=1))
    print(f"{kind} tau={tau}: lambda={lam:.3f}  approx {approx:.4f}  sim {sim.mean_latency:.4f} +- {sim.latency_ci:.4f}")

# approximation-optimized replication over a few arrival rates
for lam in (0.1, 0.3, 0.5, 0.7):
    res = optimize_latency(sc, "replication", lam)
    print(f"lambda={lam}: best replication latency {res.best_value:.4f} at tau={res.best_policy.thresholds.tau}")

# known types: exact M/G/1 per pool needs the mix of types started there
kt = optimize_latency(sc, "zero", 0.5, knowledge="known", conditioned=True)
print("known types latency at lambda=0.5:", round(kt.best_value, 4))
