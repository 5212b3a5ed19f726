"""Iterated filtering: likelihood maximization by perturbed-parameter swarms.

Each particle carries its own parameter vector on the estimation
scale.  Before every observation step the vectors receive Gaussian
jitter whose scale cools geometrically across iterations; states and
parameters are weighted and resampled jointly, and the swarm surviving
one iteration seeds the next.  The final likelihood is re-evaluated at
the unperturbed swarm mean by replicate filtering, so the reported
value is untouched by the jitter.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import io

import numpy as np

from blowpomp.errors import Divergence, ParticleDepletion
from blowpomp.rng import Channel, derive_seed, normal_from_u, site_uniforms
from blowpomp.smc import RESTART_STREAM, _filter_pass, _obs_values, replicate_loglik

__all__ = ["MifConfig", "MifTrace", "cooled_sd", "mif_restarts", "mif_search"]


@dataclasses.dataclass(frozen=True)
class MifConfig:
    """Search settings: swarm size, iterations, jitter scale, cooling."""

    j: int = 5000
    m: int = 60
    rw_sd: float | np.ndarray = 0.02
    cooling_factor: float = 0.95
    seed: int = 0

    def __post_init__(self):
        if self.j < 2:
            raise ValueError("need at least 2 particles")
        if self.m < 1:
            raise ValueError("need at least 1 iteration")
        if np.any(np.asarray(self.rw_sd, dtype=float) < 0):
            raise ValueError("rw_sd must be >= 0 componentwise")
        if not 0.0 < self.cooling_factor <= 1.0:
            raise ValueError("cooling_factor must be in (0, 1]")


def cooled_sd(rw_sd, cooling_factor, iteration):
    """Jitter scale at a 1-based iteration: rw_sd * a**(iteration-1)."""
    return np.asarray(rw_sd, dtype=float) * cooling_factor ** (iteration - 1)


@dataclasses.dataclass
class MifTrace:
    """Per-iteration swarm means and likelihoods, plus the final fit.

    param_means holds natural-scale values (the estimation-scale swarm
    mean mapped back), one row per iteration; logliks are the perturbed
    filtering likelihoods, useful for convergence plots but biased by
    the jitter.  final_loglik comes from replicate filtering at the
    unperturbed final_params.
    """

    param_means: np.ndarray
    logliks: np.ndarray
    final_params: object
    final_loglik: float
    final_loglik_se: float
    param_names: tuple

    def to_dict(self):
        return {
            "param_names": list(self.param_names),
            "param_means": [[float(v) for v in row] for row in self.param_means],
            "logliks": [float(v) for v in self.logliks],
            "final_params": self.final_params.to_dict(),
            "final_loglik": self.final_loglik,
            "final_loglik_se": self.final_loglik_se,
        }

    def to_csv(self):
        """Trace table, one row per iteration: iteration,loglik,<params>."""
        out = io.StringIO()
        out.write("iteration,loglik," + ",".join(self.param_names) + "\n")
        for i, (ll, row) in enumerate(zip(self.logliks, self.param_means), start=1):
            cells = ",".join(repr(float(v)) for v in row)
            out.write(f"{i},{float(ll)!r},{cells}\n")
        return out.getvalue()


def mif_search(model, data, start, config, final_reps=5, threads=1):
    """Run iterated filtering from one starting point.

    Returns a MifTrace of length config.m.  Raises ParticleDepletion
    (tagged with the failing iteration) if every weight vanishes, and
    Divergence if the perturbed parameters leave the valid domain.
    """
    ys = _obs_values(data)
    rw = np.broadcast_to(np.asarray(config.rw_sd, dtype=float), (model.n_theta,))
    theta0 = np.asarray(model.params_to_theta(start), dtype=float)
    swarm = np.tile(theta0, (config.j, 1))
    means = np.empty((config.m, model.n_theta))
    logliks = np.empty(config.m)

    for m in range(1, config.m + 1):
        sd = cooled_sd(rw, config.cooling_factor, m)
        perturbed = bool(np.any(sd > 0))
        try:
            result, _, swarm = _filter_pass(
                model, swarm, ys, config.j, config.seed, iteration=m, perturb_sd=sd
            )
        except ParticleDepletion as exc:
            raise ParticleDepletion(exc.step_index, partial=exc.partial, iteration=m) from exc
        except (ValueError, FloatingPointError, OverflowError) as exc:
            if perturbed:
                raise Divergence(f"filtering iteration {m} left the parameter domain: {exc}") from exc
            raise
        natural = model.theta_to_natural(swarm.mean(axis=0))
        if not np.all(np.isfinite(natural)):
            raise Divergence(f"non-finite parameter mean after iteration {m}")
        means[m - 1] = natural
        logliks[m - 1] = result.loglik

    final_params = model.theta_to_params(swarm.mean(axis=0))
    final_loglik, final_se = replicate_loglik(
        model, final_params, data, config.j, final_reps, config.seed, threads=threads
    )
    return MifTrace(
        param_means=means,
        logliks=logliks,
        final_params=final_params,
        final_loglik=final_loglik,
        final_loglik_se=final_se,
        param_names=tuple(model.param_names),
    )


def mif_restarts(model, data, start, config, n_restarts=5, jitter_sd=0.25,
                 final_reps=5, threads=1):
    """Best-of-n searches from jittered starts.

    Restart 0 keeps `start` as given; the others jitter it on the
    estimation scale with sd jitter_sd.  Each restart runs under a seed
    derived on the restart stream.  Returns (best_trace, all_traces);
    the best final_loglik wins and ties break toward the lowest index.
    """
    theta0 = np.asarray(model.params_to_theta(start), dtype=float)
    jobs = []
    for r in range(n_restarts):
        seed_r = derive_seed(config.seed, r, stream=RESTART_STREAM)
        theta_r = theta0
        if r > 0:
            u = site_uniforms(seed_r, 0, 0, Channel.PERTURBATION, 1, words=model.n_theta)[0]
            theta_r = theta0 + jitter_sd * normal_from_u(u)
        start_r = model.theta_to_params(theta_r)
        jobs.append((model, data, start_r, dataclasses.replace(config, seed=seed_r), final_reps))

    if threads > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            traces = list(pool.map(_restart_worker, jobs))
    else:
        traces = [mif_search(*job) for job in jobs]

    best = max(range(n_restarts), key=lambda r: (traces[r].final_loglik, -r))
    return traces[best], traces


def _restart_worker(args):
    return mif_search(*args)
