"""Blowfly process and measurement model, skeletons, and simulation.

The latent state is the delay buffer (N(t), ..., N(t - tau)).  One
Euler step of size delta draws a mean-1 gamma effect for recruitment
and one for survival, then

    R ~ Poisson(N(t - tau) * P * exp(-N(t - tau)/N0) * delta * e_t)
    S ~ Binomial(N(t), exp(-delta_rate * delta * eps_t))

and N(t + delta) = R + S.  Observations are bi-daily counts with a
negative-binomial measurement law of mean N and size 1/sigma_y^2.

The deterministic skeleton replaces every random quantity by its mean;
the same file houses the two-day nonlinear autoregression skeleton
used by the comparison criteria.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import gammaln

from blowpomp.core import (
    ESTIMATED_PARAMS,
    BlowflyParams,
    DelayState,
    PompModel,
    Trajectory,
    gamma_effect_from_u,
    transform_params,
)
from blowpomp.data import OBS_SPACING_DAYS
from blowpomp.errors import InvalidSigma
from blowpomp.rng import (
    Channel,
    binomial_from_u,
    negbin_from_u,
    poisson_from_u,
    site_uniforms,
)

__all__ = [
    "BlowflyModel",
    "StepOutcome",
    "XTParams",
    "iterate_skeleton",
    "measurement_draw",
    "measurement_logpdf",
    "process_step",
    "simulate",
    "skeleton_step",
    "xt_skeleton_step",
]

SIGMA_Y_FLOOR = 1e-8


@dataclasses.dataclass(frozen=True)
class StepOutcome:
    """One stochastic step: recruits R, survivors S, N(t+delta) = R + S."""

    recruits: int
    survivors: int

    @property
    def next_n(self):
        return self.recruits + self.survivors


@dataclasses.dataclass(frozen=True)
class XTParams:
    """Two-day nonlinear autoregression parameters.

    N_{k+1} = nu * N_k + c * N_{k-L}^alpha * exp(-N_{k-L} / N0_xt)
    with L = tau/2 bi-day steps.  sigma2 is the Gaussian innovation
    variance; None means it is profiled by the likelihood code.
    """

    c: float
    alpha: float
    N0_xt: float
    nu: float
    tau: float = 14.0
    sigma2: float | None = None

    def __post_init__(self):
        if not (self.c > 0 and self.N0_xt > 0 and self.alpha > 0):
            raise ValueError("c, alpha, N0_xt must be > 0")
        if not 0 < self.nu < 1:
            raise ValueError(f"nu must be in (0, 1), got {self.nu}")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")
        ratio = self.tau / OBS_SPACING_DAYS
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"tau={self.tau} is not a whole number of bi-day steps")

    @property
    def lag_steps(self):
        return round(self.tau / OBS_SPACING_DAYS)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        sigma2 = d.pop("sigma2", None)
        return cls(sigma2=None if sigma2 is None else float(sigma2), **{k: float(v) for k, v in d.items()})


def _step_draws(n_now, n_lag, p, n0, delta_rate, sigma_p, sigma_d, delta,
                seed, iteration, time_index, first_particle=0):
    """Keyed recruit/survivor draws for a block of particles.

    Parameter arguments broadcast (scalars for plain filtering,
    per-particle vectors under perturbed-parameter filtering).
    """
    j = len(n_now)
    kw = dict(n=j, first_particle=first_particle)
    u_e = site_uniforms(seed, iteration, time_index, Channel.RECRUITMENT_GAMMA, **kw)[:, 0]
    u_eps = site_uniforms(seed, iteration, time_index, Channel.SURVIVAL_GAMMA, **kw)[:, 0]
    u_r = site_uniforms(seed, iteration, time_index, Channel.RECRUITMENT_POISSON, **kw)[:, 0]
    u_s = site_uniforms(seed, iteration, time_index, Channel.SURVIVAL_BINOMIAL, **kw)[:, 0]

    e_t = gamma_effect_from_u(u_e, sigma_p, delta)
    eps_t = gamma_effect_from_u(u_eps, sigma_d, delta)
    mean_r = n_lag * p * np.exp(-n_lag / n0) * delta * e_t
    recruits = poisson_from_u(mean_r, u_r)
    p_surv = np.exp(-delta_rate * delta * eps_t)
    survivors = binomial_from_u(n_now, p_surv, u_s)
    return recruits, survivors


def process_step(state, params, key_base):
    """One stochastic Euler step for a single state.

    key_base fixes (seed, iteration, time_index, particle_index); the
    four draw channels are taken from it.  Pushing next_n into the
    buffer is the caller's move.
    """
    r, s = _step_draws(
        np.asarray([state.n_now], dtype=np.int64),
        np.asarray([state.n_lagged], dtype=float),
        params.P, params.N0, params.delta_rate, params.sigma_p, params.sigma_d,
        params.delta,
        key_base.seed, key_base.iteration, key_base.time_index,
        first_particle=key_base.particle_index,
    )
    return StepOutcome(recruits=int(r[0]), survivors=int(s[0]))


def measurement_logpdf(y, n, sigma_y):
    """Log PMF of the negative-binomial measurement, elementwise in n.

    Mean n, size 1/sigma_y^2, variance n + (sigma_y*n)^2.  n = 0 is a
    point mass at y = 0.
    """
    sigma_y = np.asarray(sigma_y, dtype=float)
    if np.any(sigma_y <= 0) or np.any(~np.isfinite(sigma_y)):
        raise InvalidSigma(f"sigma_y must be > 0, got {sigma_y}")
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    if np.any(y < 0):
        raise ValueError("y must be >= 0")
    r = np.maximum(sigma_y, SIGMA_Y_FLOOR) ** -2.0
    y_b, n_b, r_b = np.broadcast_arrays(y, n, r)
    out = np.full(y_b.shape, -np.inf)
    zero = n_b == 0
    out[zero & (y_b == 0)] = 0.0
    pos = ~zero
    if pos.any():
        yp, np_, rp = y_b[pos], n_b[pos], r_b[pos]
        # runaway parameters (inf n during a diverging search) produce
        # nan/-inf here, which the filter detects; keep the math quiet
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out[pos] = (
                gammaln(yp + rp)
                - gammaln(rp)
                - gammaln(yp + 1.0)
                - rp * np.log1p(np_ / rp)
                + yp * (np.log(np_) - np.log(rp + np_))
            )
    if out.ndim == 0:
        return float(out)
    return out


def measurement_draw(n, sigma_y, key):
    """Keyed negative-binomial observation draw for one state."""
    sigma_y = float(sigma_y)
    if sigma_y <= 0 or not math.isfinite(sigma_y):
        raise InvalidSigma(f"sigma_y must be > 0, got {sigma_y}")
    u = site_uniforms(
        key.seed, key.iteration, key.time_index, key.channel, 1,
        words=2, first_particle=key.particle_index,
    )[0]
    size = max(sigma_y, SIGMA_Y_FLOOR) ** -2.0
    return int(negbin_from_u(np.asarray([float(n)]), size, u[:1], u[1:])[0])


def skeleton_step(state, params):
    """Deterministic step: both gamma effects and both draws at their means."""
    n_lag = float(state.n_lagged)
    n_now = float(state.n_now)
    return (
        n_lag * params.P * params.delta * math.exp(-n_lag / params.N0)
        + n_now * math.exp(-params.delta_rate * params.delta)
    )


def iterate_skeleton(params, init, n_steps):
    """Trajectory of the deterministic skeleton from init (real-valued)."""
    buf = np.asarray(init.buffer, dtype=float).copy()
    lag = params.lag_steps
    if len(buf) != lag + 1:
        raise ValueError(f"init buffer length {len(buf)} != tau/delta + 1 = {lag + 1}")
    times = init.current_time + params.delta * np.arange(n_steps + 1)
    states = np.empty(n_steps + 1)
    states[0] = buf[0]
    decay = math.exp(-params.delta_rate * params.delta)
    for s in range(1, n_steps + 1):
        nxt = buf[-1] * params.P * params.delta * math.exp(-buf[-1] / params.N0) + buf[0] * decay
        buf[1:] = buf[:-1]
        buf[0] = nxt
        states[s] = nxt
    return Trajectory(times=times, states=states)


def xt_skeleton_step(history, params):
    """Two-day autoregression step.

    history is newest-first: history[0] = N_k, history[L] = N_{k-L}
    with L = params.lag_steps.  Returns N_{k+1}.
    """
    lag = params.lag_steps
    history = np.asarray(history, dtype=float)
    if len(history) < lag + 1:
        raise ValueError(f"need {lag + 1} history values, got {len(history)}")
    n_now = history[0]
    n_lag = history[lag]
    return params.nu * n_now + params.c * n_lag**params.alpha * np.exp(-n_lag / params.N0_xt)


def simulate(params, init, n_steps, seed, with_measurement=True):
    """Stochastic sample path of n_steps Euler steps from init.

    Observations are drawn at every time point a whole number of
    bi-day intervals after the initial time.  Step s uses time_index s
    on the process channels and, at observation times, the bi-day
    index on the measurement channel.
    """
    lag = params.lag_steps
    buf = np.asarray(init.buffer, dtype=np.int64).copy()
    if len(buf) != lag + 1:
        raise ValueError(f"init buffer length {len(buf)} != tau/delta + 1 = {lag + 1}")
    steps_per_obs = OBS_SPACING_DAYS / params.delta
    if abs(steps_per_obs - round(steps_per_obs)) > 1e-9:
        raise ValueError(f"delta={params.delta} does not divide the observation spacing")
    steps_per_obs = round(steps_per_obs)

    times = init.current_time + params.delta * np.arange(n_steps + 1)
    states = np.empty(n_steps + 1, dtype=np.int64)
    states[0] = buf[0]
    obs = np.full(n_steps + 1, np.nan) if with_measurement else None
    size = max(params.sigma_y, SIGMA_Y_FLOOR) ** -2.0

    for s in range(1, n_steps + 1):
        r, sv = _step_draws(
            buf[:1], np.asarray([buf[-1]], dtype=float),
            params.P, params.N0, params.delta_rate, params.sigma_p, params.sigma_d,
            params.delta, seed, 0, s,
        )
        buf[1:] = buf[:-1]
        buf[0] = r[0] + sv[0]
        states[s] = buf[0]
        if with_measurement and s % steps_per_obs == 0:
            u = site_uniforms(seed, 0, s // steps_per_obs, Channel.MEASUREMENT, 1, words=2)[0]
            obs[s] = negbin_from_u(np.asarray([float(buf[0])]), size, u[:1], u[1:])[0]

    return Trajectory(times=times, states=states, observations=obs)


class BlowflyModel(PompModel):
    """Blowfly model bound to a step size, lag, and initial delay state.

    States are (J, tau/delta + 1) integer buffers, newest first.
    theta is the six-vector of log parameters; delta and tau are
    structural and never estimated.
    """

    n_theta = len(ESTIMATED_PARAMS)
    # trace labels: "delta" here is the adult death rate (the step size
    # is structural and never traced)
    param_names = ("P", "N0", "delta", "sigma_p", "sigma_d", "sigma_y")

    def theta_to_natural(self, theta):
        return np.exp(np.asarray(theta, dtype=float))

    def __init__(self, delta, tau, init_state):
        self.delta = float(delta)
        self.tau = float(tau)
        lag = self.tau / self.delta
        if abs(lag - round(lag)) > 1e-9:
            raise ValueError(f"delta={delta} does not divide tau={tau}")
        self.buffer_len = round(lag) + 1
        steps = OBS_SPACING_DAYS / self.delta
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"delta={delta} does not divide the observation spacing")
        self.steps_per_obs = round(steps)
        if len(init_state.buffer) != self.buffer_len:
            raise ValueError(
                f"init buffer length {len(init_state.buffer)} != tau/delta + 1 = {self.buffer_len}"
            )
        self.init_state = init_state

    def params_to_theta(self, params):
        if params.delta != self.delta or params.tau != self.tau:
            raise ValueError("params delta/tau disagree with the model's structure")
        return transform_params(params, "to-estimation-scale")

    def theta_to_params(self, theta):
        theta = np.asarray(theta, dtype=float)
        template = BlowflyParams(1, 1, 1, 1, 1, 1, delta=self.delta, tau=self.tau)
        return transform_params(theta, "to-natural-scale", template=template)

    def _natural_columns(self, theta):
        nat = np.exp(np.asarray(theta, dtype=float))
        if nat.ndim == 1:
            return tuple(nat)
        return tuple(nat[:, i] for i in range(self.n_theta))

    def init_states(self, theta, j, seed, iteration=0, first_particle=0):
        return np.tile(np.asarray(self.init_state.buffer, dtype=np.int64), (j, 1))

    def propagate(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        p, n0, delta_rate, sigma_p, sigma_d, _ = self._natural_columns(theta)
        out = states.copy()
        for s in range(self.steps_per_obs):
            time_index = obs_index * self.steps_per_obs + s + 1
            r, sv = _step_draws(
                out[:, 0], out[:, -1].astype(float),
                p, n0, delta_rate, sigma_p, sigma_d, self.delta,
                seed, iteration, time_index, first_particle,
            )
            out[:, 1:] = out[:, :-1]
            out[:, 0] = r + sv
        return out

    def obs_logpdf(self, y, states, theta):
        sigma_y = np.exp(np.asarray(theta, dtype=float)[..., 5])
        return measurement_logpdf(float(y), states[:, 0].astype(float), sigma_y)

    def obs_draw(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        _, _, _, _, _, sigma_y = self._natural_columns(theta)
        size = np.maximum(sigma_y, SIGMA_Y_FLOOR) ** -2.0
        u = site_uniforms(
            seed, iteration, obs_index, Channel.MEASUREMENT, len(states),
            words=2, first_particle=first_particle,
        )
        return negbin_from_u(states[:, 0].astype(float), size, u[:, 0], u[:, 1])
