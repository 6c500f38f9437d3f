"""Sparse-prior squared-loss prediction.

Implements the heavy-tailed coordinate-wise transductive prior, its integral
predictor (deterministic tensor quadrature for d <= 3, Monte Carlo
normalizing-constant ratios in general), the quadratic-regularized variant,
the discrete-support aggregation, and the smallest scaled singular value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from . import quadrature
from .core import DesignSet, RegretTrace, clip
from .errors import DomainError, EstimatorBudgetExceeded, IntractableDimension
from .samplers import SamplerConfig, hoeffding_budget, lmc_sample

_TAIL_MASS = 1e-12


@dataclass
class SparsePriorConfig:
    """Scale tau, per-coordinate column norms, and optional quadratic term.

    ``gram`` (the design Gram matrix) is required whenever quad_reg > 0,
    since the quadratic tilt is theta^T Gram theta.
    """

    tau: float
    column_norms: np.ndarray
    quad_reg: float = 0.0
    gram: np.ndarray | None = None

    def __post_init__(self):
        self.column_norms = np.asarray(self.column_norms, dtype=float)
        if self.tau <= 0:
            raise DomainError("tau must be positive")
        if np.any(self.column_norms <= 0):
            raise DomainError("column norms must be strictly positive; drop "
                              "zero-norm coordinates first")
        if self.quad_reg < 0:
            raise DomainError("quad_reg must be nonnegative")
        if self.quad_reg > 0 and self.gram is None:
            raise DomainError("quad_reg > 0 requires the design gram")

    @classmethod
    def from_design(cls, design: DesignSet, tau: float, quad_reg: float = 0.0):
        return cls(tau=tau, column_norms=design.column_norms(),
                   quad_reg=quad_reg, gram=design.gram if quad_reg > 0 else None)

    @property
    def dim(self) -> int:
        return len(self.column_norms)


@dataclass
class SparseConfig:
    s: int
    kappa_s: float

    def __post_init__(self):
        if self.s < 1:
            raise DomainError("sparsity level must be >= 1")
        if not (0.0 < self.kappa_s <= 1.0 or self.kappa_s == 0.0):
            raise DomainError("kappa_s must lie in (0, 1] (0 flags degeneracy)")


def sparse_prior_logdensity(config: SparsePriorConfig, theta) -> float:
    """Log density of the product prior, with the optional quadratic tilt.

    The tilt's normaliser c0 is never computed: only density ratios are
    consumed downstream, where it cancels.
    """
    theta = np.asarray(theta, dtype=float)
    scaled = np.abs(theta) * config.column_norms / config.tau
    log_norm = np.sum(np.log(1.5 * config.column_norms / config.tau))
    out = log_norm - 4.0 * np.sum(np.log1p(scaled))
    if config.quad_reg > 0:
        out -= config.quad_reg * float(theta @ config.gram @ theta)
    return float(out)


def _prior_logdensity_batch(config, thetas):
    scaled = np.abs(thetas) * config.column_norms / config.tau
    out = np.sum(np.log(1.5 * config.column_norms / config.tau))
    vals = out - 4.0 * np.sum(np.log1p(scaled), axis=-1)
    if config.quad_reg > 0:
        vals = vals - config.quad_reg * np.einsum("ij,jk,ik->i", thetas,
                                                  config.gram, thetas)
    return vals


def prior_tail_radius(config: SparsePriorConfig, j: int, mass: float = _TAIL_MASS) -> float:
    """|theta_j| beyond which the coordinate prior holds < mass probability."""
    u = (0.5 / mass) ** (1.0 / 3.0) - 1.0
    return u * config.tau / config.column_norms[j]


def _data_quadratic(history, x, m, config):
    """H, r such that the +-m exponents are -(theta^T H theta - 2 r_pm^T theta + c)."""
    d = config.dim
    eta = 1.0 / (2.0 * m * m)
    H = np.zeros((d, d))
    r = np.zeros(d)
    for ex in history:
        H += np.outer(ex.x, ex.x)
        r += ex.y * ex.x
    x = np.asarray(x, dtype=float)
    H = eta * (H + np.outer(x, x))
    if config.quad_reg > 0:
        H = H + config.quad_reg * config.gram
    r_plus = eta * (r + m * x)
    r_minus = eta * (r - m * x)
    return H, r_plus, r_minus


def _axes_for(config, H, r_plus, r_minus, nodes_order=8):
    """Per-axis composite panels covering prior tails and both posteriors."""
    d = config.dim
    Hr = H + 1e-30 * np.eye(d)
    centers = []
    try:
        mode_p = np.linalg.lstsq(Hr, r_plus, rcond=None)[0]
        mode_m = np.linalg.lstsq(Hr, r_minus, rcond=None)[0]
        centers = [mode_p, mode_m, 0.5 * (mode_p + mode_m)]
    except np.linalg.LinAlgError:
        centers = [np.zeros(d)]
    diag = np.diag(H)
    pinv_diag = np.diag(np.linalg.pinv(2.0 * H, rcond=1e-12)) if np.any(diag > 0) else np.full(d, np.inf)
    axes = []
    for j in range(d):
        prior_scale = config.tau / config.column_norms[j]
        outer = prior_tail_radius(config, j)
        for c in centers:
            outer = max(outer, abs(c[j]) + 10.0 * prior_scale)
        cond = 1.0 / math.sqrt(2.0 * diag[j]) if diag[j] > 0 else prior_scale
        marg = math.sqrt(max(pinv_diag[j], 0.0)) if np.isfinite(pinv_diag[j]) else prior_scale
        ctrs = [0.0] + [c[j] for c in centers]
        scales = [prior_scale] + [min(cond, marg if marg > 0 else cond)] * len(centers)
        bps = quadrature.axis_breakpoints(ctrs, scales, outer, extra=[0.0])
        axes.append(quadrature.panel_rule(bps, order=nodes_order))
    return axes


def _log_partition_pair_quadrature(config, history, x, m, nodes_order=8):
    H, r_plus, r_minus = _data_quadratic(history, x, m, config)
    axes = _axes_for(config, H, r_plus, r_minus, nodes_order)
    points, logw = quadrature.tensor_grid(axes)
    prior = _prior_logdensity_batch(config, points)
    quad = np.einsum("ij,jk,ik->i", points, H, points)
    lin_p = points @ (2.0 * r_plus)
    lin_m = points @ (2.0 * r_minus)
    log_plus = logsumexp(prior - quad + lin_p + logw)
    log_minus = logsumexp(prior - quad + lin_m + logw)
    return float(log_plus), float(log_minus)


def sparse_predict(config: SparsePriorConfig, history, x, m: float,
                   estimator: str = "quadrature",
                   sampler: SamplerConfig | None = None,
                   nodes_order: int = 8) -> float:
    """The integral predictor: (m/2) log of the ratio of the two +-m
    pseudo-label partition functions under the sparse prior.

    ``quadrature`` (d <= 3) is the deterministic oracle; ``mc`` samples the
    shared-base posterior with LMC and reweights both pseudo-label factors,
    certifying an additive error of 2 m epsilon by Hoeffding budgeting on the
    [0, 1]-bounded weights.
    """
    x = np.asarray(x, dtype=float)
    if estimator == "quadrature":
        if config.dim > 3:
            raise IntractableDimension("quadrature backend supports d <= 3")
        lp, lm = _log_partition_pair_quadrature(config, history, x, m, nodes_order)
        return 0.5 * m * (lp - lm)
    if estimator != "mc":
        raise DomainError(f"unknown estimator {estimator!r}")
    return _sparse_predict_mc(config, history, x, m,
                              sampler or SamplerConfig())


def _sparse_predict_mc(config, history, x, m, sampler: SamplerConfig) -> float:
    """Monte Carlo backend via the shared-base trick.

    Both integrals share the no-pseudo-label base density pi_R propto
    exp(-sum_i (y_i - <x_i, theta>)^2 / (2 m^2)) * prior; the reweighting
    factors exp(-(m -+ <x, theta>)^2 / (2 m^2)) lie in (0, 1], so a single
    LMC batch serves both with range-1 Hoeffding certification.
    """
    eta = 1.0 / (2.0 * m * m)
    X_hist = np.array([ex.x for ex in history]) if history else np.zeros((0, config.dim))
    y_hist = np.array([ex.y for ex in history])

    cn = config.column_norms / config.tau

    def grad(thetas):
        g = -4.0 * np.sign(thetas) * cn / (1.0 + np.abs(thetas) * cn)
        if len(y_hist):
            resid = thetas @ X_hist.T - y_hist
            g = g - 2.0 * eta * resid @ X_hist
        if config.quad_reg > 0:
            g = g - 2.0 * config.quad_reg * thetas @ config.gram
        return g

    # pilot draw to locate the weight means, then Hoeffding-size the budget
    eps = sampler.epsilon
    pilot_n = max(512, sampler.n_chains)
    start = np.zeros(config.dim)
    if len(y_hist):
        H = eta * (X_hist.T @ X_hist) + 1e-9 * np.eye(config.dim)
        start = np.linalg.lstsq(H, eta * (X_hist.T @ y_hist), rcond=None)[0]

    def weights(thetas):
        v = thetas @ x
        wp = np.exp(-eta * (m - v) ** 2)
        wm = np.exp(-eta * (-m - v) ** 2)
        return wp, wm

    pilot = lmc_sample(grad, start, sampler, pilot_n, rng_offset=0)
    wp, wm = weights(pilot)
    mean_lo = max(min(wp.mean(), wm.mean()) * 0.5, 1e-6)
    n = hoeffding_budget(1.0, 2.0 * eps * mean_lo, sampler.delta)
    if n > sampler.max_samples:
        raise EstimatorBudgetExceeded(
            f"cannot certify epsilon={eps} within {sampler.max_samples} samples")
    draws = lmc_sample(grad, start, sampler, n, rng_offset=7_000_000)
    wp, wm = weights(draws)
    mp, mm = float(wp.mean()), float(wm.mean())
    if min(mp, mm) < 4.0 * 2.0 * eps * mean_lo:
        raise EstimatorBudgetExceeded("weight mean too small to certify the log ratio")
    return 0.5 * m * (math.log(mp) - math.log(mm))


def compute_kappa(design: DesignSet, s: int) -> float:
    """Smallest scaled singular value over all size-s supports.

    min over supports of sigma_min(design columns on the support) divided by
    the largest column norm; exactly 0 flags a degenerate support.
    """
    d = design.dim
    if s > d:
        raise DomainError("sparsity level exceeds dimension")
    n_supports = math.comb(d, s)
    if n_supports > 10**6:
        raise IntractableDimension(f"C({d},{s}) = {n_supports} supports")
    max_norm = float(np.max(design.column_norms()))
    best = np.inf
    for support in combinations(range(d), s):
        sub = design.matrix[:, support]
        smin = float(np.linalg.svd(sub, compute_uv=False)[-1]) if min(sub.shape) else 0.0
        best = min(best, smin / max_norm)
    return float(max(best, 0.0))


def _best_sparse_loss(X, y, d, s):
    """Exact best s-sparse squared loss by support enumeration."""
    best = float(np.sum(y**2))
    for support in combinations(range(d), min(s, d)):
        sub = X[:, support]
        theta, *_ = np.linalg.lstsq(sub, y, rcond=None)
        best = min(best, float(np.sum((y - sub @ theta) ** 2)))
    return best


def sparse_regret_bound(m: float, s: int, d: int, T: int, kappa: float,
                        quad_reg: bool = False) -> float:
    """Regret ceiling for the integral predictor at tau = m sqrt(s/d)."""
    if kappa <= 0:
        return float("inf")
    base = 8.0 * math.log1p((2.0 / kappa) * math.sqrt(d * T / s))
    return s * m * m * ((6.0 if quad_reg else 1.0) + base)


def run_sparse(design: DesignSet, sequence, m: float, s: int,
               estimator: str = "quadrature", quad_reg: float | None = None,
               sampler: SamplerConfig | None = None,
               nodes_order: int = 8) -> RegretTrace:
    """Run the sparse integral predictor over a revealed sequence.

    ``quad_reg=None`` selects the pure prior; passing 0.0 < quad_reg uses the
    quadratic-regularised variant (whose canonical value is
    (s/T wedge 1) / (2 m^2)) and the constant-6 bound.
    """
    T = design.size
    d = design.dim
    tau = m * math.sqrt(s / d)
    qr = 0.0 if quad_reg is None else quad_reg
    config = SparsePriorConfig.from_design(design, tau, qr)
    kappa = compute_kappa(design, s)
    slack = sparse_regret_bound(m, s, d, T, kappa, quad_reg=qr > 0)
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    trace = RegretTrace(meta={"kind": "sparse", "m": m, "s": s, "tau": tau,
                              "kappa": kappa, "estimator": estimator,
                              "quad_reg": qr})
    history = []
    for t, ex in enumerate(sequence):
        pred = sparse_predict(config, history, ex.x, m, estimator=estimator,
                              sampler=sampler, nodes_order=nodes_order)
        loss = (ex.y - pred) ** 2
        history.append(ex)
        comp = _best_sparse_loss(X[:t + 1], y[:t + 1], d, s)
        trace.append(pred, loss, comp, comp + slack)
    return trace


def canonical_quad_reg(m: float, s: int, T: int) -> float:
    return (min(s / T, 1.0)) / (2.0 * m * m)


def discrete_prior_logmass(d: int):
    """Log prior masses over all 2^d supports: (C(d,k) e^k H_d)^{-1}.

    H_d sums e^{-i} over i = 0..d so the masses over the full subset lattice
    (empty support included) total exactly 1.
    """
    h_d = sum(math.exp(-i) for i in range(d + 1))
    supports = []
    logmass = []
    for k in range(d + 1):
        for support in combinations(range(d), k):
            supports.append(support)
            logmass.append(-math.log(math.comb(d, k)) - k - math.log(h_d))
    return supports, np.array(logmass)


def run_discrete_sparse(design: DesignSet, sequence, m: float, s: int,
                        lam: float | None = None) -> RegretTrace:
    """Discrete-support aggregation of clipped fixed-design ridge experts.

    Each support p carries the design-penalised estimator restricted to its
    coordinates; predictions are clipped to [-m, m] and aggregated by
    exponential weights at eta = 1/(8 m^2) under the subset prior.
    """
    d = design.dim
    if d > 12:
        raise IntractableDimension("full support enumeration needs d <= 12")
    T = design.size
    if lam is None:
        lam = s / T
    supports, logmass = discrete_prior_logmass(d)
    eta = 1.0 / (8.0 * m * m)
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    G = design.gram
    gram_hist = np.zeros((d, d))
    xy = np.zeros(d)
    logw = logmass.copy()
    slack = s * m * m * (math.log(1.0 + T / s) + 16.0 * math.log(math.e * d / s) + 5.0)
    trace = RegretTrace(meta={"kind": "discrete-sparse", "m": m, "s": s,
                              "lambda": lam})

    def support_prediction(support, x):
        if not support:
            return 0.0
        idx = list(support)
        M = gram_hist[np.ix_(idx, idx)] + lam * G[np.ix_(idx, idx)]
        theta = np.linalg.lstsq(M, xy[idx], rcond=None)[0]
        return clip(float(x[idx] @ theta), m)

    for t, ex in enumerate(sequence):
        preds = np.array([support_prediction(p, ex.x) for p in supports])
        p_agg = np.exp(logw - logsumexp(logw))
        pred = float(p_agg @ preds)
        loss = (ex.y - pred) ** 2
        logw = logw - eta * (ex.y - preds) ** 2
        gram_hist += np.outer(ex.x, ex.x)
        xy += ex.y * ex.x
        comp = _best_sparse_loss(X[:t + 1], y[:t + 1], d, s)
        trace.append(pred, loss, comp, comp + slack)
    return trace
