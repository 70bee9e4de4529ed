"""Expected work per job and the stability bound of single policies."""
import numpy as np

from affinityq.load import load_full_redundancy, load_replication, load_rerouting, load_zero_redundancy
from affinityq.model import INF, SizeModel, effective_assignment, two_type

# Two job types with speeds (1, 0.1) and (0.1, 1), five servers per pool,
# exponential sizes of mean 10, types unknown to the dispatcher.
sc = two_type(0.1, size_model=SizeModel.exponential(10.0))
A = effective_assignment(sc, 0.5)

# the bound is min_i n_i / E[B_i]
zr = load_zero_redundancy(sc, A)
print("zero redundancy  E[B] =", np.round(zr.expected_B, 4), " lambda_max =", round(zr.lambda_max, 6))
print("  closed form 2r/(1+r) =", round(2 * 0.1 / 1.1, 6))

fr = load_full_redundancy(sc)
print("full redundancy  E[B] =", np.round(fr.expected_B, 4), " lambda_max =", round(fr.lambda_max, 6))

# thresholds interpolate between the two extremes
for tau in (0.0, 2.0, 10.0, 50.0, INF):
    rer = load_rerouting(sc, A, (tau, tau))
    rep = load_replication(sc, A, (tau, tau))
    print(f"tau={tau:>5}: rerouting lambda_max {rer.lambda_max:.4f}   replication lambda_max {rep.lambda_max:.4f}")

# carry-over keeps the work already done when a job moves
rer = load_rerouting(sc, A, (10.0, 10.0), carry_over=True)
print("rerouting with carry-over at tau=10:", round(rer.lambda_max, 4))

# effective loads at a given arrival rate
print("rho at lambda=0.15 (zero redundancy):", np.round(zr.at(0.15).rho, 4))

# with iid replicas full redundancy gains from the minimum of two draws
iid = sc.replace(size_model=SizeModel.exponential(10.0, "iid"))
print("iid full redundancy lambda_max:", round(load_full_redundancy(iid).lambda_max, 6), "= (1+r)/2")
