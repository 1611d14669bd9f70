"""Maximum-entropy panel selection for citizens' assemblies."""

from .counting import DPTable, WeightVector, build_dp, count_incrementally, reweight, total_count
from .errors import (InfeasibleError, InstanceError, MemoryBudgetExceeded, SamplingTimeout,
                     SortitionError)
from .instance import Instance, load_instance, parse_instance
from .lottery import build_lottery, deviation_bound, draw, read_lottery
from .optimizer import OptimizerConfig, TargetMarginals, optimize
from .rng import RandomStream
from .sampler import SamplerConfig, plan_and_build, sample_exact, sample_many, sample_rejection

__all__ = [
    "DPTable", "WeightVector", "build_dp", "count_incrementally", "reweight", "total_count",
    "InfeasibleError", "InstanceError", "MemoryBudgetExceeded", "SamplingTimeout",
    "SortitionError", "Instance", "load_instance", "parse_instance", "build_lottery",
    "deviation_bound", "draw", "read_lottery", "OptimizerConfig", "TargetMarginals", "optimize",
    "RandomStream", "SamplerConfig", "plan_and_build", "sample_exact", "sample_many",
    "sample_rejection",
]
