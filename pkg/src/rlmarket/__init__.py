"""Multi-agent stock market simulator with reinforcement-learning investors."""

from .core import SimConfig, validate_config
from .engine import RunResult, World, run, run_batch

__all__ = ["SimConfig", "validate_config", "RunResult", "World", "run", "run_batch"]
__version__ = "0.1.0"
