"""Bootstrap particle filter with systematic resampling.

Propagate the particle cloud through the process model to each
observation time, weight by the measurement density, accumulate the
conditional log-likelihood as a max-shifted log-mean-exp, and resample
systematically at every observation.  All randomness is keyed, so a
run is reproducible from (seed, J) alone.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses

import numpy as np

from blowpomp.data import ObservationSeries
from blowpomp.errors import AllWeightsDegenerate, ParticleDepletion
from blowpomp.rng import Channel, derive_seed, key_uniforms, normal_from_u, site_uniforms
from blowpomp.core import RngStreamKey

__all__ = ["FilterResult", "pfilter", "replicate_loglik", "systematic_resample"]

# derive_seed stream ids, so replicate seeds never collide with restart seeds
REPLICATE_STREAM = 1
RESTART_STREAM = 2


@dataclasses.dataclass
class FilterResult:
    """One particle-filter pass: likelihood and per-observation diagnostics."""

    loglik: float
    cond_logliks: np.ndarray
    ess: np.ndarray
    filter_means: np.ndarray
    j: int
    seed: int
    loglik_se: float | None = None

    def to_dict(self):
        return {
            "loglik": self.loglik,
            "loglik_se": self.loglik_se,
            "cond_logliks": [float(v) for v in self.cond_logliks],
            "ess": [float(v) for v in self.ess],
            "filter_means": [float(v) for v in self.filter_means],
            "J": self.j,
            "seed": self.seed,
        }


def systematic_resample(log_weights, key):
    """Ancestor indices from one uniform offset on the weight grid.

    Guarantees each index appears either floor(J*w) or ceil(J*w) times
    for normalized weights w.
    """
    lw = np.asarray(log_weights, dtype=float)
    j = len(lw)
    m = np.max(lw)
    if not np.isfinite(m):
        raise AllWeightsDegenerate("no finite log-weight to resample from")
    w = np.exp(lw - m)
    cum = np.cumsum(w)
    u = key_uniforms(key, 1)[0]
    positions = (np.arange(j) + u) * (cum[-1] / j)
    ancestors = np.searchsorted(cum, positions, side="left")
    return np.minimum(ancestors, j - 1).astype(np.int64)


def _obs_values(data):
    if isinstance(data, ObservationSeries):
        return data.counts.astype(float)
    return np.asarray(data, dtype=float)


def _partial_result(cond, ess, means, upto, j, seed):
    return FilterResult(
        loglik=float(np.sum(cond[:upto])),
        cond_logliks=cond[:upto].copy(),
        ess=ess[:upto].copy(),
        filter_means=means[:upto].copy(),
        j=j,
        seed=seed,
    )


def _filter_pass(model, theta, ys, j, seed, iteration=0, perturb_sd=None):
    """Shared filtering loop.

    theta is (n_theta,) for a plain filter or (j, n_theta) for a
    perturbed-parameter swarm; perturb_sd, when given, jitters each
    particle's theta before every propagation on the perturbation
    channel.  Returns (FilterResult, final states, final theta).
    """
    n = len(ys)
    theta = np.asarray(theta, dtype=float)
    swarm = theta.ndim == 2
    states = model.init_states(theta, j, seed, iteration)
    cond = np.empty(n)
    ess = np.empty(n)
    means = np.empty(n)
    jitter = perturb_sd is not None and np.any(perturb_sd > 0)

    for i in range(n):
        if jitter:
            u = site_uniforms(seed, iteration, i, Channel.PERTURBATION, j, words=model.n_theta)
            theta = theta + perturb_sd * normal_from_u(u)
        states = model.propagate(states, theta, i, seed, iteration)
        lp = model.obs_logpdf(ys[i], states, theta)
        if np.any(np.isnan(lp)):
            raise ValueError(f"NaN measurement log-density at observation {i}")
        m = np.max(lp)
        if not np.isfinite(m):
            raise ParticleDepletion(i, partial=_partial_result(cond, ess, means, i, j, seed))
        w = np.exp(lp - m)
        sw = float(np.sum(w))
        cond[i] = m + np.log(sw / j)
        ess[i] = sw * sw / float(np.sum(w * w))
        means[i] = float(np.dot(w, states[:, 0])) / sw
        key = RngStreamKey(seed=seed, iteration=iteration, time_index=i, particle_index=0, channel=Channel.RESAMPLING)
        ancestors = systematic_resample(lp, key)
        states = states[ancestors]
        if swarm:
            theta = theta[ancestors]

    result = FilterResult(
        loglik=float(np.sum(cond)),
        cond_logliks=cond,
        ess=ess,
        filter_means=means,
        j=j,
        seed=seed,
    )
    return result, states, theta


def pfilter(model, params, data, j, seed, iteration=0):
    """Bootstrap particle-filter log-likelihood of the data window.

    params are natural-scale model parameters; data is an
    ObservationSeries window or a plain observation array.
    """
    if j < 2:
        raise ValueError("need at least 2 particles")
    theta = model.params_to_theta(params)
    result, _, _ = _filter_pass(model, theta, _obs_values(data), j, int(seed), iteration)
    return result


def replicate_loglik(model, params, data, j, n_reps, seed, seeds=None, threads=1):
    """Log-mean-exp of replicate filter likelihoods, with jackknife SE.

    Replicates run under seeds derived from `seed` (or an explicit
    `seeds` list) and may execute in parallel processes; results are
    identical either way.
    """
    if seeds is None:
        if n_reps < 2:
            raise ValueError("need at least 2 replicates")
        seeds = [derive_seed(seed, r, stream=REPLICATE_STREAM) for r in range(n_reps)]
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError("need at least 2 replicates")

    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_replicate_worker, [(model, params, data, j, s) for s in seeds]))
    else:
        results = [pfilter(model, params, data, j, s).loglik for s in seeds]

    lls = np.asarray(results, dtype=float)
    combined = _log_mean_exp(lls)
    loo = np.array([_log_mean_exp(np.delete(lls, i)) for i in range(len(lls))])
    n = len(lls)
    se = float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))
    return combined, se


def _replicate_worker(args):
    model, params, data, j, seed = args
    return pfilter(model, params, data, j, seed).loglik


def _log_mean_exp(values):
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.mean(np.exp(values - m))))
