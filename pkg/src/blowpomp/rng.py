"""Keyed counter-based random streams and inverse-CDF samplers.

Every random draw in the package is addressed by an explicit key
(seed, iteration, time index, particle index, channel) and produced by
a Philox4x64-10 block evaluation at that address, never by advancing a
shared sequential stream.  Draws depend only on their address, so a
particle filter gives bit-identical results under any chunking of the
particle axis and any thread count.

Layout: the Philox key packs (seed, iteration << 8 | channel); counter
word 0 is the block address and word 1 carries the time index.  Each
site (one particle, one time, one channel) owns ceil(words/4)
consecutive blocks of four 64-bit outputs.  numpy's Philox advances
the counter before emitting the first block, so the constructed
counter is the address of the block *preceding* the first one
returned; the helpers below account for that offset.

Distribution draws consume a fixed number of uniforms per site
(usually one), which rules out rejection samplers.  Gamma uses the
exact quantile via gammaincinv.  Poisson and Binomial use a
normal-approximation start, one exact CDF evaluation, then a pmf-ratio
walk to the quantile: scipy's pdtrik/bdtrik inverses cost microseconds
per element, far too slow for the particle-filter budgets.
"""

from __future__ import annotations

import enum

import numpy as np
from scipy.special import bdtr, gammaincinv, gammaln, ndtri, pdtr

__all__ = [
    "Channel",
    "binomial_from_u",
    "derive_seed",
    "gamma_from_u",
    "key_uniforms",
    "negbin_from_u",
    "normal_from_u",
    "poisson_from_u",
    "site_uniforms",
]


class Channel(enum.IntEnum):
    """Purpose of a draw; part of the stream address.

    Values are wire-stable: they are baked into the Philox key, so
    renumbering changes every result downstream.
    """

    RECRUITMENT_GAMMA = 0
    RECRUITMENT_POISSON = 1
    SURVIVAL_GAMMA = 2
    SURVIVAL_BINOMIAL = 3
    MEASUREMENT = 4
    PERTURBATION = 5
    RESAMPLING = 6
    INIT = 7
    PROCESS = 8
    DERIVE = 9


_INV_2_53 = 2.0 ** -53
_MAX_U64 = (1 << 64) - 1
_MAX_ITERATION = (1 << 56) - 1


def _raw_words(seed, iteration, channel, time_index, first_block, n_words):
    if not 0 <= int(seed) <= _MAX_U64:
        raise ValueError(f"seed must fit in 64 bits, got {seed}")
    if not 0 <= int(iteration) <= _MAX_ITERATION:
        raise ValueError(f"iteration must fit in 56 bits, got {iteration}")
    if not 0 <= int(time_index) <= _MAX_U64:
        raise ValueError(f"time_index must fit in 64 bits, got {time_index}")
    key = np.array([int(seed), (int(iteration) << 8) | int(channel)], dtype=np.uint64)
    counter = np.array([int(first_block), int(time_index), 0, 0], dtype=np.uint64)
    return np.random.Philox(counter=counter, key=key).random_raw(int(n_words))


def _to_uniform(raw):
    # top 53 bits, centered on the grid: strictly inside (0, 1)
    return ((raw >> np.uint64(11)) + 0.5) * _INV_2_53


def site_uniforms(seed, iteration, time_index, channel, n, words=1, first_particle=0):
    """Uniform(0,1) draws for particles [first_particle, first_particle + n).

    Returns shape (n, words).  Values depend only on the global particle
    index, never on n or first_particle, so an ensemble computed in
    chunks is bit-identical to the single-call result.  Block ownership
    depends on `words`, so all calls on one channel must agree on it.
    """
    n = int(n)
    words = int(words)
    if n < 0:
        raise ValueError("n must be >= 0")
    if words < 1:
        raise ValueError("words must be >= 1")
    if int(first_particle) < 0:
        raise ValueError("first_particle must be >= 0")
    nb = -(-words // 4)
    raw = _raw_words(
        seed, iteration, channel, time_index, int(first_particle) * nb, 4 * nb * n
    )
    return _to_uniform(raw.reshape(n, 4 * nb)[:, :words])


def key_uniforms(key, words=1):
    """Uniforms for one addressed site; scalar twin of site_uniforms."""
    return site_uniforms(
        key.seed,
        key.iteration,
        key.time_index,
        key.channel,
        1,
        words=words,
        first_particle=key.particle_index,
    )[0]


def derive_seed(seed, index, stream=0):
    """Child seed for replicate/restart `index`, disjoint from all model channels."""
    if int(index) < 0:
        raise ValueError("index must be >= 0")
    raw = _raw_words(seed, stream, Channel.DERIVE, 0, int(index), 1)
    return int(raw[0])


def normal_from_u(u):
    """Standard normal quantile of u."""
    return ndtri(u)


def gamma_from_u(shape, scale, u):
    """Gamma(shape, scale) quantile of u; exact inverse CDF."""
    return gammaincinv(shape, u) * np.asarray(scale, dtype=float)


def poisson_from_u(lam, u, max_iter=1024):
    """Poisson quantile draw: smallest k with CDF(k) >= u, elementwise.

    All inputs broadcast.  lam = 0 returns 0 for any u.
    """
    lam, u = np.broadcast_arrays(np.asarray(lam, float), np.asarray(u, float))
    if np.any(lam < 0) or np.any(~np.isfinite(lam)):
        raise ValueError("lam must be finite and >= 0")
    out = np.zeros(lam.shape, dtype=np.int64)
    act = lam > 0
    if not act.any():
        return out
    lam_a = lam[act]
    u_a = u[act]

    z = ndtri(u_a)
    k = np.maximum(np.floor(lam_a + np.sqrt(lam_a) * z + (z * z - 1.0) / 6.0 + 0.5), 0.0)
    cdf = pdtr(k, lam_a)
    pmf = np.exp(k * np.log(lam_a) - lam_a - gammaln(k + 1.0))

    # cdf - pmf is the CDF one step down; descend while it still covers u.
    # For subnormal lam the ratio k/lam overflows to inf on the final step
    # to k=0; the walk has already stopped consuming pmf there, so the
    # result is unaffected and the overflow is deliberately silenced.
    with np.errstate(over="ignore"):
        for _ in range(max_iter):
            m = (cdf - pmf >= u_a) & (k > 0)
            if not m.any():
                break
            cdf[m] -= pmf[m]
            pmf[m] *= k[m] / lam_a[m]
            k[m] -= 1.0
        else:
            raise RuntimeError("poisson quantile walk failed to terminate (down)")

    for _ in range(max_iter):
        m = cdf < u_a
        if not m.any():
            break
        k[m] += 1.0
        pmf[m] *= lam_a[m] / k[m]
        cdf[m] += pmf[m]
    else:
        raise RuntimeError("poisson quantile walk failed to terminate (up)")

    out[act] = k.astype(np.int64)
    return out


def binomial_from_u(n, p, u, max_iter=1024):
    """Binomial quantile draw: smallest k with CDF(k) >= u, elementwise.

    All inputs broadcast.  n = 0 gives 0; p clamped to [0, 1] endpoints
    gives the degenerate constants.
    """
    n, p, u = np.broadcast_arrays(
        np.asarray(n, float), np.asarray(p, float), np.asarray(u, float)
    )
    if np.any(n < 0) or np.any(~np.isfinite(n)):
        raise ValueError("n must be finite and >= 0")
    if np.any(p < 0) or np.any(p > 1) or np.any(~np.isfinite(p)):
        raise ValueError("p must be in [0, 1]")
    out = np.zeros(n.shape, dtype=np.int64)
    hi = p >= 1.0
    out[hi] = n[hi].astype(np.int64)
    act = (n > 0) & (p > 0.0) & ~hi
    if not act.any():
        return out
    n_a = n[act]
    p_a = p[act]
    u_a = u[act]
    q_a = 1.0 - p_a

    z = ndtri(u_a)
    mean = n_a * p_a
    sd = np.sqrt(mean * q_a)
    skew_corr = (z * z - 1.0) * (1.0 - 2.0 * p_a) / 6.0
    k = np.clip(np.floor(mean + sd * z + skew_corr + 0.5), 0.0, n_a)
    # integer-dtype n selects bdtr's integer loop: quiet and much faster
    cdf = bdtr(k, n_a.astype(np.int64), p_a)
    with np.errstate(divide="ignore"):
        logq = np.log(q_a)
    pmf = np.exp(
        gammaln(n_a + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n_a - k + 1.0)
        + k * np.log(p_a)
        + (n_a - k) * logq
    )
    # q underflows for p within 1e-16 of 1; the walk then stops at n
    # immediately because cdf jumps to/above u, so inf ratios are inert,
    # but keep them finite to avoid 0 * inf
    ratio = p_a / np.maximum(q_a, 1e-300)

    for _ in range(max_iter):
        m = (cdf - pmf >= u_a) & (k > 0)
        if not m.any():
            break
        cdf[m] -= pmf[m]
        pmf[m] *= k[m] / ((n_a[m] - k[m] + 1.0) * ratio[m])
        k[m] -= 1.0
    else:
        raise RuntimeError("binomial quantile walk failed to terminate (down)")

    for _ in range(max_iter):
        m = (cdf < u_a) & (k < n_a)
        if not m.any():
            break
        pmf[m] *= ratio[m] * (n_a[m] - k[m]) / (k[m] + 1.0)
        k[m] += 1.0
        cdf[m] += pmf[m]
    else:
        raise RuntimeError("binomial quantile walk failed to terminate (up)")

    out[act] = k.astype(np.int64)
    return out


def negbin_from_u(mean, size, u_gamma, u_poisson):
    """Negative binomial draw with the given mean and size (dispersion).

    Gamma-Poisson mixture: G ~ Gamma(size, mean/size), then
    Poisson(G).  Marginally NB with variance mean + mean^2/size.
    Consumes two uniforms per draw.  mean = 0 returns 0.
    """
    mean = np.asarray(mean, dtype=float)
    size = np.asarray(size, dtype=float)
    if np.any(size <= 0):
        raise ValueError("size must be > 0")
    g = gamma_from_u(size, mean / size, u_gamma)
    return poisson_from_u(g, u_poisson)
