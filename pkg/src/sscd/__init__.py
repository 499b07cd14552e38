"""Workbench for single-machine deadline scheduling mechanisms.

Exact enumeration of every randomness branch (rational arithmetic end to
end) serves as the verification oracle; Monte Carlo sampling scales the same
mechanisms up to larger instances.
"""

from .core import (
    NEVER_FINISHES,
    Instance,
    LengthCdf,
    Player,
    Preference,
    Qualitative,
    Quantitative,
    SampledSource,
    make_instance,
    point_mass,
    sample_length,
    validate_cdf,
)
from .engine import EvalResult, exact_evaluate, monte_carlo, run_once
from .metrics import (
    exact_preemptive_optimum,
    fair_share,
    fairness_ratio,
    realized_optimal_welfare,
)
from .schedulers import SCHEDULER_KINDS, SchedulerSpec

__all__ = [
    "NEVER_FINISHES",
    "Instance",
    "LengthCdf",
    "Player",
    "Preference",
    "Qualitative",
    "Quantitative",
    "SampledSource",
    "make_instance",
    "point_mass",
    "sample_length",
    "validate_cdf",
    "EvalResult",
    "exact_evaluate",
    "monte_carlo",
    "run_once",
    "exact_preemptive_optimum",
    "fair_share",
    "fairness_ratio",
    "realized_optimal_welfare",
    "SCHEDULER_KINDS",
    "SchedulerSpec",
]
