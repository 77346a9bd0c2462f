"""Parameter estimation for a driven two-level emitter from photon-counting records."""

from photoest.qdyn import (
    ClassicalMoments,
    LiouvillianMatrix,
    SystemParams,
    classical_moments,
    liouvillian,
    steady_state_population,
    waiting_time_cdf,
    waiting_time_density,
)

__version__ = "0.1.0"

__all__ = [
    "ClassicalMoments",
    "LiouvillianMatrix",
    "SystemParams",
    "classical_moments",
    "liouvillian",
    "steady_state_population",
    "waiting_time_cdf",
    "waiting_time_density",
]
