"""HAPS-aided GPS positioning: simulation, least-squares solving, RAIM and
RINEX ingestion."""

from .config import ScenarioConfig, load_config
from .harness import SystemVariant, availability, percentile, run_campaign, run_rinex
from .raim import RaimConfig, solve_epoch_raim
from .solver import SolverConfig, solve_epoch

__all__ = ["ScenarioConfig", "load_config", "SystemVariant", "run_campaign", "run_rinex",
           "percentile", "availability",
           "RaimConfig", "solve_epoch_raim", "SolverConfig", "solve_epoch"]
__version__ = "0.1.0"
