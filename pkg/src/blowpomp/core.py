"""Shared parameter, state, and trajectory types, plus the model interface.

The types here are consumed by every other module: the blowfly
parameter set and its estimation-scale transform, the delay-buffer
Markov state, the RNG stream key, and the abstract state-space model
contract that the particle filter and iterated filtering drive.
"""

from __future__ import annotations

import abc
import dataclasses
import math

import numpy as np

from blowpomp.errors import NonPositiveParameter
from blowpomp.rng import Channel, gamma_from_u, key_uniforms

__all__ = [
    "ESTIMATED_PARAMS",
    "BlowflyParams",
    "DelayState",
    "PompModel",
    "RngStreamKey",
    "Trajectory",
    "gamma_effect",
    "gamma_effect_from_u",
    "transform_params",
]

# the six estimated parameters, in estimation-vector order
ESTIMATED_PARAMS = ("P", "N0", "delta_rate", "sigma_p", "sigma_d", "sigma_y")

# below this the gamma effect is numerically degenerate at its mean
SIGMA_DEGENERATE = 1e-8


@dataclasses.dataclass(frozen=True)
class BlowflyParams:
    """Natural-scale blowfly model parameters.

    P: per-capita recruitment rate (1/day)
    N0: competition scale (adults)
    delta_rate: adult death rate (1/day)
    sigma_p: recruitment noise scale (day^(1/2))
    sigma_d: survival noise scale (day^(1/2))
    sigma_y: measurement overdispersion (dimensionless)
    delta: Euler step (days); must divide tau
    tau: maturation delay (days)
    """

    P: float
    N0: float
    delta_rate: float
    sigma_p: float
    sigma_d: float
    sigma_y: float
    delta: float = 1.0
    tau: float = 14.0

    def __post_init__(self):
        for name in ESTIMATED_PARAMS:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise NonPositiveParameter(f"{name} must be finite and > 0, got {v}")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be > 0, got {self.tau}")
        ratio = self.tau / self.delta
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"delta={self.delta} does not divide tau={self.tau}")

    @property
    def lag_steps(self):
        """tau as a whole number of delta-steps."""
        return round(self.tau / self.delta)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: float(v) for k, v in d.items()})


@dataclasses.dataclass
class DelayState:
    """Delay-buffer Markov state.

    buffer[0] is N(t), buffer[j] is N(t - j*delta), buffer[-1] is
    N(t - tau); length tau/delta + 1.  Stochastic simulation keeps
    integer buffers; skeleton iteration stores reals.
    """

    buffer: np.ndarray
    current_time: float

    def __post_init__(self):
        buf = np.asarray(self.buffer)
        if buf.ndim != 1 or len(buf) < 2:
            raise ValueError("buffer must be 1-D with at least 2 entries")
        if not np.all(np.isfinite(buf)) or np.any(buf < 0):
            raise ValueError("buffer entries must be finite and >= 0")
        self.buffer = buf

    @property
    def n_now(self):
        return self.buffer[0]

    @property
    def n_lagged(self):
        return self.buffer[-1]

    def shifted(self, next_n, delta):
        """New state with next_n pushed in and the oldest entry dropped."""
        buf = np.empty_like(self.buffer)
        buf[0] = next_n
        buf[1:] = self.buffer[:-1]
        return DelayState(buf, self.current_time + delta)


@dataclasses.dataclass(frozen=True)
class RngStreamKey:
    """Address of one random-draw site; see the rng module."""

    seed: int
    iteration: int
    time_index: int
    particle_index: int
    channel: Channel


@dataclasses.dataclass
class Trajectory:
    """Simulated or skeleton sample path.

    times are day-stamps; states holds N(t) per time point;
    observations, when present, aligns with times and is NaN at
    non-observation steps.
    """

    times: np.ndarray
    states: np.ndarray
    observations: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states)
        if len(self.times) != len(self.states):
            raise ValueError("times and states must align")
        if self.observations is not None:
            self.observations = np.asarray(self.observations, dtype=float)
            if len(self.observations) != len(self.times):
                raise ValueError("observations must align with times")


def transform_params(value, direction, template=None):
    """Map between natural-scale BlowflyParams and the estimation vector.

    direction "to-estimation-scale": value is a BlowflyParams; returns
    the length-6 vector of logs of the estimated parameters.
    direction "to-natural-scale": value is such a vector; `template`
    supplies the structural constants (delta, tau); returns BlowflyParams.
    """
    if direction == "to-estimation-scale":
        vals = np.array([getattr(value, name) for name in ESTIMATED_PARAMS], dtype=float)
        if np.any(vals <= 0) or not np.all(np.isfinite(vals)):
            raise NonPositiveParameter(f"cannot log-transform {vals}")
        return np.log(vals)
    if direction == "to-natural-scale":
        vec = np.asarray(value, dtype=float)
        if vec.shape != (len(ESTIMATED_PARAMS),):
            raise ValueError(f"expected vector of length {len(ESTIMATED_PARAMS)}")
        if template is None:
            raise ValueError("to-natural-scale requires a template for delta and tau")
        natural = dict(zip(ESTIMATED_PARAMS, np.exp(vec)))
        return BlowflyParams(delta=template.delta, tau=template.tau, **natural)
    raise ValueError(f"unknown direction {direction!r}")


def gamma_effect_from_u(u, sigma, delta):
    """Gamma random effect with mean 1 and variance sigma^2/delta.

    Shape delta/sigma^2, scale sigma^2/delta, applied to uniforms u.
    sigma below the degeneracy floor gives the constant 1.  Broadcasts
    over per-particle sigma vectors.
    """
    u = np.asarray(u, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be >= 0")
    if delta <= 0:
        raise ValueError("delta must be > 0")
    sig2 = np.maximum(sigma, SIGMA_DEGENERATE) ** 2
    out = gamma_from_u(delta / sig2, sig2 / delta, u)
    return np.where(sigma < SIGMA_DEGENERATE, 1.0, out)


def gamma_effect(key, sigma, delta):
    """Scalar keyed draw of the mean-1 gamma effect."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    u = key_uniforms(key, 1)
    return float(gamma_effect_from_u(u, sigma, delta)[0])


class PompModel(abc.ABC):
    """State-space model contract for the filtering machinery.

    States are a (J, state_dim) array.  theta is the parameter vector
    on the estimation scale: shape (n_theta,) when shared, or
    (J, n_theta) when each particle carries its own copy.  All
    randomness is addressed through keyed channels, so methods take
    (seed, iteration, first_particle) rather than generator objects;
    first_particle offsets the particle axis so a chunked computation
    reproduces the single-call result bit for bit.
    """

    n_theta: int
    # reporting labels for the estimation-scale coordinates, in order
    param_names: tuple = ()

    def theta_to_natural(self, theta):
        """Natural-scale vector for an estimation-scale point (reporting)."""
        raise NotImplementedError

    @abc.abstractmethod
    def params_to_theta(self, params):
        """Natural-scale parameters to an estimation-scale vector."""

    @abc.abstractmethod
    def theta_to_params(self, theta):
        """Estimation-scale vector back to natural-scale parameters."""

    @abc.abstractmethod
    def init_states(self, theta, j, seed, iteration=0, first_particle=0):
        """(j, state_dim) initial state array."""

    @abc.abstractmethod
    def propagate(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        """Advance states from observation obs_index - 1 to obs_index."""

    @abc.abstractmethod
    def obs_logpdf(self, y, states, theta):
        """Per-particle log measurement density of the scalar y."""

    @abc.abstractmethod
    def obs_draw(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        """Simulated observation per particle at obs_index."""
