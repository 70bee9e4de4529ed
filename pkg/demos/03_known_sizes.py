"""Per-job thresholds when job sizes are known on arrival."""
import numpy as np

from affinityq.load import load_known_sizes, load_rerouting
from affinityq.model import KnownSizesRule, PolicySpec, SizeModel, ThresholdVector, effective_assignment, two_type

sc = two_type(0.1, size_model=SizeModel.exponential(10.0))
A = effective_assignment(sc, 0.5)
tau = (12.0, 12.0)

# the constant rule ignores the size and reproduces the unknown-sizes policy
const = load_known_sizes(sc, PolicySpec("rerouting", A, ThresholdVector(tau), known_sizes_rule=KnownSizesRule()))
print("constant rule   E[B] =", np.round(const.expected_B, 4),
      " unknown sizes E[B] =", np.round(load_rerouting(sc, A, tau).expected_B, 4))

# rounding each job's threshold down to its last possible completion instant
# never adds work in either pool
for rule in ("rational_floor", "rational", "best"):
    pol = PolicySpec("rerouting", A, ThresholdVector(tau), known_sizes_rule=KnownSizesRule(rule))
    rep = load_known_sizes(sc, pol)
    print(f"{rule:15s} E[B] = {np.round(rep.expected_B, 4)}  lambda_max = {rep.lambda_max:.4f}")
