"""Generic stochastic machinery: Langevin Monte Carlo for log-concave
densities, Hoeffding budgeting, normalizing-constant ratio estimation, and
Metropolis-Hastings over finite expert sets.

Reproducibility: every chain uses a counter-based Philox generator keyed by
(master_seed, chain index), so runs are deterministic under any parallel
schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DivergenceDetected, EstimatorBudgetExceeded, UnboundedRatio

_DIVERGENCE_NORM = 1e12


@dataclass
class SamplerConfig:
    epsilon: float = 0.05
    delta: float = 0.05
    step_size: float = 0.01
    burn_in: int = 500
    n_chains: int = 64
    master_seed: int = 0
    thin: int = 1
    max_samples: int = 10_000_000

    def __post_init__(self):
        if not (0 < self.epsilon < 1 and 0 < self.delta < 1):
            raise ValueError("epsilon and delta must lie in (0, 1)")
        if self.step_size <= 0 or self.burn_in < 0 or self.n_chains < 1:
            raise ValueError("invalid sampler configuration")


def chain_rng(master_seed: int, chain_index: int) -> np.random.Generator:
    """Counter-based splittable generator keyed by (master_seed, chain)."""
    return np.random.Generator(np.random.Philox(key=(master_seed << 16) + chain_index))


def hoeffding_budget(range_width: float, epsilon: float, delta: float) -> int:
    """Samples needed so a mean of [0, width]-valued i.i.d. draws is within
    epsilon of its expectation with probability 1 - delta."""
    if range_width <= 0 or epsilon <= 0 or delta <= 0:
        raise ValueError("hoeffding_budget inputs must be positive")
    return int(math.ceil(range_width**2 * math.log(2.0 / delta) / (2.0 * epsilon**2)))


def theoretical_burn_in(alpha: float, d: int, epsilon: float) -> float:
    """The published LMC step-count for the logistic slab posterior.

    O(((alpha + 1/4)/alpha)^2 d eps^-2 (2 log(1/eps) + (d/2) log((alpha+1/4)/alpha))^2.
    Returned for reporting; at alpha = 1/T^3 it exceeds T^6 and desk runs use
    the configured burn_in instead.
    """
    kappa = (alpha + 0.25) / alpha
    return kappa**2 * d * epsilon**-2 * (2 * math.log(1 / epsilon) + 0.5 * d * math.log(kappa))**2


def lmc_sample(log_density_gradient, start, config: SamplerConfig, n_samples: int,
               rng_offset: int = 0) -> np.ndarray:
    """Unadjusted Langevin iterates theta' = theta + h grad + sqrt(2h) xi.

    ``log_density_gradient`` maps an (n_chains, d) batch to the (sub)gradient
    batch of the log density.  Chains run in parallel from ``start`` (a single
    point or one row per chain); after burn-in, samples are harvested with the
    configured thinning and stacked step-major, so the output is
    deterministic for a fixed config.  Noise streams are drawn per chain from
    Philox keyed by (master_seed, rng_offset + chain), in blocks.
    """
    start = np.atleast_2d(np.asarray(start, dtype=float))
    c = config.n_chains
    d = start.shape[1]
    if start.shape[0] == 1:
        start = np.repeat(start, c, axis=0)
    if n_samples > config.max_samples:
        raise EstimatorBudgetExceeded(
            f"requested {n_samples} samples exceeds cap {config.max_samples}")
    per_chain = -(-n_samples // c)  # ceil
    total_steps = config.burn_in + per_chain * config.thin
    h = config.step_size
    sq = math.sqrt(2.0 * h)
    theta = start.copy()
    rngs = [chain_rng(config.master_seed, rng_offset + k) for k in range(c)]

    kept = []
    block = 512
    done = 0
    while done < total_steps:
        nsteps = min(block, total_steps - done)
        # noise[i, k, :] is step i of chain k
        noise = np.stack([rngs[k].standard_normal((nsteps, d)) for k in range(c)],
                         axis=1)
        for i in range(nsteps):
            theta = theta + h * log_density_gradient(theta) + sq * noise[i]
            step_index = done + i + 1
            if step_index > config.burn_in and \
                    (step_index - config.burn_in) % config.thin == 0:
                kept.append(theta.copy())
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > _DIVERGENCE_NORM:
            raise DivergenceDetected("LMC iterate exceeded 1e12; reduce step size")
        done += nsteps
    samples = np.concatenate(kept, axis=0)
    return samples[:n_samples]


def log_partition_ratio(potential_a, potential_b, grad_b, start,
                        config: SamplerConfig, diff_bound: float,
                        n_override: int | None = None):
    """Estimate log(Z_a / Z_b) for densities exp(potential) by importance
    reweighting of LMC draws from pi_b.

    ``diff_bound`` declares sup |potential_a - potential_b| over the sampled
    region; the weights exp(diff) then live in [e^-B, e^B] and Hoeffding
    budgeting certifies an additive error of log((1+eps)/(1-eps)) on the log
    ratio at confidence 1 - delta.  A pilot batch estimates the mean weight to
    size the final budget.  Raises UnboundedRatio if a sampled difference
    exceeds the declared bound.  Potentials must accept (n, d) batches.
    """
    b = float(diff_bound)
    width = math.exp(b) - math.exp(-b) if b > 0 else 1.0

    def draw(n, offset):
        samples = lmc_sample(grad_b, start, config, n, rng_offset=offset)
        diffs = np.asarray(potential_a(samples)) - np.asarray(potential_b(samples))
        if np.max(np.abs(diffs)) > b + 1e-9:
            raise UnboundedRatio(
                f"sampled |potential difference| {np.max(np.abs(diffs)):.3f} "
                f"exceeds declared bound {b}")
        return diffs

    if n_override is not None:
        diffs = draw(n_override, 0)
        return float(logsumexp(diffs) - math.log(len(diffs)))

    pilot = draw(max(256, config.n_chains), 0)
    mean_est = float(np.mean(np.exp(pilot)))
    # target additive error on the mean: eps * mean gives log error <= log((1+eps)/(1-eps))
    eps_mean = config.epsilon * max(mean_est * 0.5, math.exp(-b))
    n = hoeffding_budget(width, eps_mean, config.delta)
    if n > config.max_samples:
        raise EstimatorBudgetExceeded(
            f"certified budget {n} exceeds cap {config.max_samples}")
    diffs = draw(n, 1_000_000)
    return float(logsumexp(diffs) - math.log(len(diffs)))


def mh_over_experts(log_weights, n_steps: int, seed, proposal=None) -> np.ndarray:
    """Metropolis-Hastings chain over a finite expert set.

    The stationary distribution is proportional to exp(log_weights).  The
    default proposal is uniform over all indices (symmetric).  Returns the
    visited index sequence after the chain start.
    """
    logw = np.asarray(log_weights, dtype=float)
    k = len(logw)
    if k == 0:
        raise ValueError("expert set must be nonempty")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    finite = np.flatnonzero(np.isfinite(logw))
    if finite.size == 0:
        raise ValueError("at least one expert must have finite weight")
    current = int(finite[rng.integers(len(finite))])
    proposals = rng.integers(0, k, size=n_steps) if proposal is None else proposal
    accept_u = rng.random(n_steps)
    out = np.empty(n_steps, dtype=np.int64)
    for i in range(n_steps):
        j = int(proposals[i])
        log_ratio = logw[j] - logw[current]
        if log_ratio >= 0 or accept_u[i] < math.exp(max(log_ratio, -745.0)):
            current = j
        out[i] = current
    return out


def mh_frequency_chi2(samples: np.ndarray, log_weights) -> float:
    """Chi-squared statistic of empirical frequencies vs the Gibbs target."""
    logw = np.asarray(log_weights, dtype=float)
    p = np.exp(logw - logsumexp(logw))
    counts = np.bincount(samples, minlength=len(logw)).astype(float)
    n = counts.sum()
    expected = n * p
    mask = expected > 0
    return float(np.sum((counts[mask] - expected[mask]) ** 2 / expected[mask]))
