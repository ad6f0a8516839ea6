"""Differentially private release of k sensitivity-1 query answers.

The main entry points are :func:`iterative_svc`, :func:`high_prob_answer` and
:func:`expected_error_answer`, with :func:`gaussian_mechanism` and
:func:`laplace_split_baseline` as baselines. Randomness comes from a seeded
:class:`NoiseSource`; privacy parameters from :class:`PrivacyBudget`.
"""

from .accounting import (
    PROFILES,
    Constants,
    PrivacyBudget,
    Schedule,
    advanced_compose,
    basic_compose,
    bound,
    build_schedule,
    format_schedule,
    get_constants,
    schedule_budget_chain,
    schedule_csv,
)
from .exceptions import InfeasibleScheduleError, InvalidParameterError
from .mechanisms import (
    AnswerVector,
    Workload,
    expected_error_answer,
    gaussian_mechanism,
    high_prob_answer,
    iterative_svc,
    laplace_split_baseline,
)
from .noise import NoiseSource
from .sparse_vector import above_threshold, permuted_above_threshold, sv_correct

__version__ = "0.1.0"

__all__ = [
    "PROFILES",
    "Constants",
    "PrivacyBudget",
    "Schedule",
    "advanced_compose",
    "basic_compose",
    "bound",
    "build_schedule",
    "format_schedule",
    "get_constants",
    "schedule_budget_chain",
    "schedule_csv",
    "InfeasibleScheduleError",
    "InvalidParameterError",
    "AnswerVector",
    "Workload",
    "expected_error_answer",
    "gaussian_mechanism",
    "high_prob_answer",
    "iterative_svc",
    "laplace_split_baseline",
    "NoiseSource",
    "above_threshold",
    "permuted_above_threshold",
    "sv_correct",
]
