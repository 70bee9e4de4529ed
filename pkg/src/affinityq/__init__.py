"""Stability, latency and simulation of two-pool systems with job-server affinity."""

__version__ = "0.1.0"

from .model import (INF, AssignmentMatrix, ConfusionMatrix, JobType, KnownSizesRule, PolicySpec,
                    Scenario, ScenarioError, SizeModel, ThresholdMatrix, ThresholdVector,
                    effective_assignment, load_scenario_file, two_type, validate)
from .functionals import Functionals
from .load import (LoadReport, load_full_redundancy, load_known_sizes, load_policy,
                   load_replication, load_rerouting, load_rerouting_multi, load_zero_redundancy)
from .stability import GridSpec, OptimizationResult, SweepTable, optimize_stability, sweep
