"""Monte Carlo simulator and analysis pipeline for a delayed-choice single-photon experiment."""

from .config import RunConfig, load_config, parse_config
from .experiment import hbt_run, run, sweep_phase

__all__ = ["RunConfig", "load_config", "parse_config", "run", "sweep_phase", "hbt_run"]
__version__ = "0.1.0"
