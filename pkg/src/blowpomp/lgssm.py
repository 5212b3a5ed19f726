"""Scalar linear-Gaussian AR(1) state-space test model.

x_0 is stationary, x_i = ar * x_{i-1} + sigma_x * w_i, and
y_i = x_i + sigma_obs * v_i for i = 1..n.  The exact Kalman
log-likelihood makes this the correctness anchor for the particle
filter and the iterated-filtering search: the blowfly model has no
tractable likelihood to compare against.

Only the AR coefficient is treated as estimable (atanh scale); the
two noise scales are structural.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from blowpomp.core import PompModel
from blowpomp.rng import Channel, normal_from_u, site_uniforms

__all__ = ["LgssmModel", "LgssmParams", "kalman_loglik", "simulate_lgssm"]


@dataclasses.dataclass(frozen=True)
class LgssmParams:
    ar: float
    sigma_x: float
    sigma_obs: float

    def __post_init__(self):
        if not abs(self.ar) < 1:
            raise ValueError(f"|ar| must be < 1 for stationarity, got {self.ar}")
        if self.sigma_x <= 0 or self.sigma_obs <= 0:
            raise ValueError("sigma_x and sigma_obs must be > 0")


def kalman_loglik(params, ys):
    """Exact log-likelihood of y_1..y_n with stationary initialization."""
    ys = np.asarray(ys, dtype=float)
    a = params.ar
    qx = params.sigma_x**2
    qo = params.sigma_obs**2
    m = 0.0
    p = qx / (1.0 - a * a)
    ll = 0.0
    for y in ys:
        m_pred = a * m
        p_pred = a * a * p + qx
        s = p_pred + qo
        resid = y - m_pred
        ll += -0.5 * (math.log(2.0 * math.pi * s) + resid * resid / s)
        gain = p_pred / s
        m = m_pred + gain * resid
        p = (1.0 - gain) * p_pred
    return ll


def simulate_lgssm(params, n, seed):
    """(states x_1..x_n, observations y_1..y_n), keyed by seed."""
    u0 = site_uniforms(seed, 0, 0, Channel.INIT, 1)[0, 0]
    x = params.sigma_x / math.sqrt(1.0 - params.ar**2) * normal_from_u(u0)
    xs = np.empty(n)
    ys = np.empty(n)
    for i in range(1, n + 1):
        uw = site_uniforms(seed, 0, i, Channel.PROCESS, 1)[0, 0]
        x = params.ar * x + params.sigma_x * normal_from_u(uw)
        uv = site_uniforms(seed, 0, i, Channel.MEASUREMENT, 1)[0, 0]
        xs[i - 1] = x
        ys[i - 1] = x + params.sigma_obs * normal_from_u(uv)
    return xs, ys


class LgssmModel(PompModel):
    """PompModel wrapper; states are (J, 1) reals."""

    n_theta = 1
    param_names = ("ar",)

    def theta_to_natural(self, theta):
        return np.tanh(np.asarray(theta, dtype=float))

    def __init__(self, sigma_x, sigma_obs):
        self.sigma_x = float(sigma_x)
        self.sigma_obs = float(sigma_obs)

    def params_to_theta(self, params):
        if params.sigma_x != self.sigma_x or params.sigma_obs != self.sigma_obs:
            raise ValueError("params noise scales disagree with the model's structure")
        return np.array([math.atanh(params.ar)])

    def theta_to_params(self, theta):
        return LgssmParams(float(np.tanh(np.asarray(theta)[0])), self.sigma_x, self.sigma_obs)

    def _ar(self, theta):
        return np.tanh(np.asarray(theta, dtype=float)[..., 0])

    def init_states(self, theta, j, seed, iteration=0, first_particle=0):
        a = self._ar(theta)
        sd = self.sigma_x / np.sqrt(1.0 - a * a)
        u = site_uniforms(seed, iteration, 0, Channel.INIT, j, first_particle=first_particle)[:, 0]
        return (sd * normal_from_u(u)).reshape(j, 1)

    def propagate(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        a = self._ar(theta)
        u = site_uniforms(
            seed, iteration, obs_index + 1, Channel.PROCESS, len(states), first_particle=first_particle
        )[:, 0]
        return (a * states[:, 0] + self.sigma_x * normal_from_u(u)).reshape(-1, 1)

    def obs_logpdf(self, y, states, theta):
        resid = float(y) - states[:, 0]
        return -0.5 * (np.log(2.0 * np.pi * self.sigma_obs**2) + (resid / self.sigma_obs) ** 2)

    def obs_draw(self, states, theta, obs_index, seed, iteration=0, first_particle=0):
        u = site_uniforms(
            seed, iteration, obs_index + 1, Channel.MEASUREMENT, len(states), first_particle=first_particle
        )[:, 0]
        return states[:, 0] + self.sigma_obs * normal_from_u(u)
