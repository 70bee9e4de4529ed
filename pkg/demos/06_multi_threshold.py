"""Rerouting a job several times via a threshold matrix."""
import numpy as np

from affinityq.load import load_rerouting, load_rerouting_multi
from affinityq.model import PolicySpec, SizeModel, ThresholdMatrix, effective_assignment, two_type
from affinityq.sim import SimConfig, run

sc = two_type(0.1, size_model=SizeModel.exponential(10.0))
A = effective_assignment(sc, 0.5)

# one threshold per row is plain rerouting
print(np.round(load_rerouting_multi(sc, A, ((8.0,), (8.0,))).expected_B, 6),
      np.round(load_rerouting(sc, A, (8.0, 8.0)).expected_B, 6))

# row i: thresholds met by a job that starts on pool i, in order of the pools it visits
T = ((5.0, 15.0, 40.0), (8.0, 25.0, 30.0))
lit = load_rerouting_multi(sc, A, T)
cum = load_rerouting_multi(sc, A, T, cumulative=True)
print("stage-wise E[B] =", np.round(lit.expected_B, 4), " cumulative E[B] =", np.round(cum.expected_B, 4))

lam = 0.6 * cum.lambda_max
rep = run(SimConfig(sc, PolicySpec("rerouting", A, ThresholdMatrix(T)), lam, horizon=150_000, seed=2))
print("rho", np.round(cum.at(lam).rho, 4), " simulated", np.round(rep.utilization, 4))
