"""Monte Carlo coverage simulator for mmWave integrated access and backhaul
networks with RIS- and repeater-assisted backhaul."""

__version__ = "0.1.0"

from .errors import ConfigError, InvalidParameterError, InvariantError  # noqa: E402
from .montecarlo import (CoverageEstimate, Scenario, estimate_coverage,  # noqa: E402
                         run_sweep, run_trial)

__all__ = [
    "ConfigError",
    "CoverageEstimate",
    "InvalidParameterError",
    "InvariantError",
    "Scenario",
    "__version__",
    "estimate_coverage",
    "run_sweep",
    "run_trial",
]
