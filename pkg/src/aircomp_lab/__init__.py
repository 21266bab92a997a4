"""Over-the-air weighted averaging with adaptive weight truncation.

Modules
-------
channel    fading channels, gains and unit conversions
aircomp    AirComp summation and the averaging protocols
gp         Gaussian-process regression core
bayesopt   Bayesian optimisation of the truncation bounds
radiomap   1-D radio-map scenarios
dgpr       product-of-experts GP regression fused over the air
harness    sweeps, seeding and CSV output
fedavg     federated averaging with AirComp aggregation
"""

from .aircomp import TruncationParams
from .bayesopt import BoConfig, optimize_truncation
from .channel import ChannelKind, RadioSystem, SystemConfig

__all__ = [
    "BoConfig",
    "ChannelKind",
    "RadioSystem",
    "SystemConfig",
    "TruncationParams",
    "optimize_truncation",
]
__version__ = "0.1.0"
