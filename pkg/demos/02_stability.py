"""Maximizing the stability bound over policy families and sweeping a parameter."""
from affinityq.model import SizeModel, two_type
from affinityq.stability import GridSpec, optimize_stability, sweep

sc = two_type(0.1, size_model=SizeModel.exponential(10.0))

# each family is optimized over the assignment q and the per-pool thresholds;
# replication may come out as q=0 with tau_2=0, which is full redundancy again
for family in ("zero", "rerouting", "replication", "full"):
    res = optimize_stability(sc, family)
    pol = res.best_policy
    print(f"{family:12s} lambda_max {res.best_value:.6f}  q={pol.assignment.q}  tau={pol.thresholds.tau}")

# known types: every job goes to its fast pool
print("known types lambda_max:", optimize_stability(sc, "zero", "known").best_value)

# known sizes on top of unknown types: per-job thresholds at completion instants
print("known sizes lambda_max:", round(optimize_stability(sc, "known_sizes_rerouting").best_value, 6))

# a coarse sweep over the slow speed; the full figure grid is in affinityq.figures
table = sweep(sc, "r_slow", [0.1, 0.3, 0.5, 0.8, 1.0], ("KT", "Rep", "FRed", "Rer", "ZRed"),
              grid=GridSpec(q_step=0.1, tau_points=12, refine_passes=2))
print(table.to_csv())
