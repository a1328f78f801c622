"""Deterministic experiment harness: simulated worker pools and studies."""

from .metrics import bootstrap_ci, compute_iqm, min_max_normalize
from .sim import RunMetrics, SimSchedule, simulate_pool
from .study import (run_delay_study, run_update_study, summarize_delay_study,
                    summarize_update_study)

__all__ = ["bootstrap_ci", "compute_iqm", "min_max_normalize", "RunMetrics", "SimSchedule",
           "simulate_pool", "run_delay_study", "run_update_study", "summarize_delay_study",
           "summarize_update_study"]
