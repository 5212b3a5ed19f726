"""Particle-filter inference for blowfly population dynamics.

Simulation and likelihood-based fitting of a delayed-recruitment
population model driven by environmental and demographic noise, plus
log-ARMA and threshold-autoregression benchmark fits for model
comparison on the same data.
"""

from blowpomp.core import BlowflyParams, DelayState, RngStreamKey, Trajectory
from blowpomp.rng import Channel

__all__ = [
    "BlowflyParams",
    "Channel",
    "DelayState",
    "RngStreamKey",
    "Trajectory",
]

__version__ = "0.1.0"
