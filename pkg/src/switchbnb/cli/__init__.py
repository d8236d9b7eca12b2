"""Instance generation, batch runs and reports."""

from .config import BatchConfig, SolverSettings, load_config, parse_config
from .instance import Instance, generate, generating_control
from .main import build_parser, main, solve_instance

__all__ = [
    "BatchConfig",
    "Instance",
    "SolverSettings",
    "build_parser",
    "generate",
    "generating_control",
    "load_config",
    "main",
    "parse_config",
    "solve_instance",
]
