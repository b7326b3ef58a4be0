"""Coverage-guided fuzzing with a learned mutation-operator scheduler."""

from .config import ConfigError, EnvConfig
from .coverage import CoverageMap, ExecutionFeedback, absorb, reward
from .engine import ActionRing, Engine, RunReport, init_run
from .env import FuzzEnv, ObservationEncoder, encode_observation
from .mutators import DictionaryState, MutatorAction, mutate, record_coverage_credit
from .rng import RngStream
from .targets import TargetProgram, get_target, register_target

__version__ = "0.1.0"

__all__ = [
    "ActionRing", "ConfigError", "CoverageMap", "DictionaryState", "Engine", "EnvConfig",
    "ExecutionFeedback", "FuzzEnv", "MutatorAction", "ObservationEncoder", "RngStream",
    "RunReport", "TargetProgram", "absorb", "encode_observation", "get_target", "init_run",
    "mutate", "record_coverage_credit", "register_target", "reward",
]
