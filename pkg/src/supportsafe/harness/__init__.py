"""Experiment drivers, run configuration and the command-line interface."""

from .config import DEFAULTS, ConfigError, load_config, resolve
from .seeds import cell_rng, cell_seed
