"""Monte-Carlo experiment driver, metrics and command line entry point."""

from .experiment import ESTIMATORS, ExperimentSpec, ResultRow, run_experiment
from .metrics import nmse, nmse_db, support_accuracy

__all__ = [
    "ESTIMATORS", "ExperimentSpec", "ResultRow", "run_experiment",
    "nmse", "nmse_db", "support_accuracy",
]
