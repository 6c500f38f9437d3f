"""Hinge-loss prediction: the Gaussian-prior exponential-weights predictor,
its inductive corollary bound, slab-experts for the hinge loss, and their
aggregation.

The EWA predictor is the posterior mean of the clipped margin, computed by
Langevin Monte Carlo with Hoeffding-certified sample budgets; the
slab-expert aggregation uses a deterministic tensor-quadrature backend for
the in-slab posterior means (d <= 2), which keeps enumeration-scale pools
inside the runtime budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .core import (DesignSet, ProblemSpec, RegretTrace, clip, sign,
                   solve_comparator, span_basis)
from .errors import DomainError
from .logistic import enumerate_pair_behaviors
from .samplers import SamplerConfig, hoeffding_budget, lmc_sample


@dataclass
class HingeSpec:
    """Margin, learning rate, and the Gaussian prior's (lambda, A); beta only
    parameterises the bound formulas, never the algorithm."""

    gamma: float
    eta: float
    lam: float
    A: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.gamma <= 0 or self.lam <= 0 or self.beta <= 0:
            raise DomainError("gamma, lambda, beta must be positive")
        if not (0.0 <= self.eta * self.gamma <= 0.3 + 1e-12):
            raise DomainError(
                f"eta * gamma = {self.eta * self.gamma} outside [0, 3/10]")

    @property
    def dim(self) -> int:
        return self.A.shape[0]


class HingePosterior:
    """rho_t proportional to exp(-eta sum (gamma - y <x, theta>)_+) * prior,
    with prior density sqrt(det(lam A)) exp(-pi lam theta^T A theta)."""

    def __init__(self, spec: HingeSpec):
        self.spec = spec
        self.xs: list[np.ndarray] = []
        self.ys: list[float] = []
        self._xmat = np.zeros((0, spec.dim))
        self._yvec = np.zeros(0)
        self._prior_precision = math.pi * spec.lam * spec.A

    def update(self, x, y):
        self.xs.append(np.asarray(x, dtype=float))
        self.ys.append(float(y))
        self._xmat = np.array(self.xs)
        self._yvec = np.array(self.ys)

    def log_density(self, thetas) -> np.ndarray:
        """Unnormalised log density on an (n, d) batch."""
        thetas = np.atleast_2d(thetas)
        out = -np.einsum("ij,jk,ik->i", thetas, self._prior_precision, thetas)
        if len(self.ys):
            margins = self.spec.gamma - self._yvec * (thetas @ self._xmat.T)
            out = out - self.spec.eta * np.sum(np.maximum(margins, 0.0), axis=1)
        return out

    def grad_log_density(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        g = -2.0 * thetas @ self._prior_precision
        if len(self.ys):
            active = (self.spec.gamma - self._yvec * (thetas @ self._xmat.T)) > 0
            g = g + self.spec.eta * (active * self._yvec) @ self._xmat
        return g

    def smoothness(self) -> float:
        """Lipschitz surrogate for the step-size rule: the prior curvature
        plus the hinge subgradient scale."""
        quad = 2.0 * math.pi * self.spec.lam * float(
            np.max(np.linalg.eigvalsh(self.spec.A)))
        if len(self.ys):
            quad += self.spec.eta * float(np.sum(self._xmat**2)) / self.spec.gamma
        return max(quad, 1e-12)


def hinge_predict(posterior: HingePosterior, x, horizon: int,
                  backend: str = "lmc", sampler: SamplerConfig | None = None,
                  chains_state: np.ndarray | None = None):
    """E_{theta ~ rho}[clip_gamma(<x, theta>)].

    The lmc backend draws a Hoeffding budget of samples for additive error
    gamma/horizon at confidence 1 - 1/horizon^2 (range [-gamma, gamma]).
    With no history the posterior is the symmetric Gaussian prior, so the
    mean is exactly 0 (the exact backend).  Returns (value, chains) so
    callers can warm-start the next round.
    """
    x = np.asarray(x, dtype=float)
    gamma = posterior.spec.gamma
    if backend == "exact" or not posterior.ys:
        if posterior.ys:
            raise DomainError("exact backend only applies with no history")
        return 0.0, chains_state
    cfg = sampler or SamplerConfig()
    n = hoeffding_budget(2.0 * gamma, gamma / horizon, 1.0 / horizon**2)
    lip = posterior.smoothness()
    step = min(cfg.step_size, 0.2 / lip)
    burn = cfg.burn_in if chains_state is None else max(cfg.burn_in // 8, 40)
    local = SamplerConfig(epsilon=cfg.epsilon, delta=cfg.delta, step_size=step,
                          burn_in=burn, n_chains=cfg.n_chains,
                          master_seed=cfg.master_seed, thin=cfg.thin,
                          max_samples=max(cfg.max_samples, n))
    start = chains_state if chains_state is not None else np.zeros(posterior.spec.dim)
    draws = lmc_sample(posterior.grad_log_density, start, local, n)
    value = float(np.mean(np.clip(draws @ x, -gamma, gamma)))
    tail = draws[-local.n_chains:]
    return value, tail


def hinge_prop_bound(spec: HingeSpec, theta_star, xs) -> float:
    """The four-term regret ceiling of the Gaussian-prior EWA predictor."""
    theta_star = np.asarray(theta_star, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    g, eta, lam, beta = spec.gamma, spec.eta, spec.lam, spec.beta
    d = spec.dim
    hinge_star = 0.0  # the comparator term is carried by the trace column
    a_half_inv = np.linalg.pinv(spec.A)
    term_b = float(np.sum(np.sqrt(np.einsum("ij,jk,ik->i", xs, a_half_inv, xs))))
    term_b /= math.pi * g * math.sqrt(beta)
    term_c = math.pi * lam * float(theta_star @ spec.A @ theta_star) / (eta * g)
    term_d = 0.5 * d / (eta * g) * (math.log(beta / lam) - 0.5 + lam / (2.0 * beta))
    return (1.0 + 2.0 * eta * g) * (hinge_star + term_b + term_c + term_d)


def hinge_separable_bound(d: int, T: int, r: float, b: float, gamma: float) -> float:
    """Margin-separable ceiling of the inductive corollary at eta = 3/(10 gamma)."""
    return (7.0 / 3.0) * (1.0 / math.pi + math.pi
                          + 0.5 * d * math.log1p(9.0 * T**2 * r**2 * b**2
                                                 / (100.0 * gamma**2)))


def hinge_slab_bound(d: int, T: int) -> float:
    """Separable ceiling of the slab-expert aggregation at eta = 3/(10 gamma)."""
    return 10.0 + 31.0 * d * math.log(math.pi * T)


def mistake_count(trace: RegretTrace, sequence) -> int:
    """Binary mistakes of the recorded predictions (sign, with sign(0)=+1)."""
    return sum(1 for row, ex in zip(trace.rows, sequence)
               if sign(row.prediction) != ex.y)


def run_hinge_ewa(sequence, spec: HingeSpec, theta_star=None,
                  sampler: SamplerConfig | None = None) -> RegretTrace:
    """Gaussian-prior EWA on the hinge loss over a revealed sequence.

    The trace carries normalized hinge losses; the comparator column uses the
    declared theta_star if given (otherwise the exact LP comparator on the
    full sequence) and the bound column adds the four-term ceiling.
    """
    T = len(sequence)
    xs = np.array([ex.x for ex in sequence])
    if theta_star is None:
        prob = ProblemSpec(m=1.0, loss_kind="hinge", gamma=spec.gamma)
        theta_star = solve_comparator(list(sequence), prob, 0.0).theta
    theta_star = np.asarray(theta_star, dtype=float)
    comp_losses = np.maximum(spec.gamma - np.array([ex.y for ex in sequence])
                             * (xs @ theta_star), 0.0) / spec.gamma
    slack = hinge_prop_bound(spec, theta_star, xs)
    scale = 1.0 + 2.0 * spec.eta * spec.gamma
    posterior = HingePosterior(spec)
    trace = RegretTrace(meta={"kind": "hinge-ewa", "gamma": spec.gamma,
                              "eta": spec.eta, "lambda": spec.lam})
    chains = None
    for t, ex in enumerate(sequence):
        pred, chains = hinge_predict(posterior, ex.x, T, backend="lmc",
                                     sampler=sampler, chains_state=chains)
        loss = max(spec.gamma - ex.y * pred, 0.0) / spec.gamma
        posterior.update(ex.x, ex.y)
        comp_cum = float(np.sum(comp_losses[:t + 1]))
        trace.append(pred, loss, comp_cum, scale * comp_cum + slack)
    return trace


class HingePartialEwa:
    """Partial EWA with hinge loss on a covariate subset, quadrature backend.

    Prior precision alpha * sum_{x in K} x x^T on the subset's span;
    prediction is the posterior mean of clip_gamma(<x, theta>).
    """

    def __init__(self, covariates, alpha: float, eta: float, gamma: float):
        xs = np.atleast_2d(np.array([np.asarray(c, float) for c in covariates]))
        self.alpha = float(alpha)
        self.eta = float(eta)
        self.gamma = float(gamma)
        self.V = span_basis(xs)
        z_design = xs @ self.V
        self.prior_precision = self.alpha * (z_design.T @ z_design)
        self.zs: list[np.ndarray] = []
        self.ys: list[float] = []
        self._zmat = np.zeros((0, self.V.shape[1]))
        self._yvec = np.zeros(0)
        self._mode = np.zeros(self.V.shape[1])

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def to_span(self, x):
        return self.V.T @ np.asarray(x, dtype=float)

    def update(self, x, y):
        self.zs.append(self.to_span(x))
        self.ys.append(float(y))
        self._zmat = np.array(self.zs)
        self._yvec = np.array(self.ys)

    def _neg_log_post(self, u):
        out = float(u @ self.prior_precision @ u)
        if len(self.ys):
            margins = self.gamma - self._yvec * (self._zmat @ u)
            out += self.eta * float(np.sum(np.maximum(margins, 0.0)))
        return out

    def _subgrad(self, u):
        g = 2.0 * self.prior_precision @ u
        if len(self.ys):
            active = (self.gamma - self._yvec * (self._zmat @ u)) > 0
            g = g - self.eta * (active * self._yvec) @ self._zmat
        return g

    def _find_mode(self, iters=300):
        # plain subgradient descent with diminishing steps; the mode only
        # centres the quadrature panels, so coarse accuracy is enough
        u = self._mode.copy()
        lam_max = max(float(np.max(np.linalg.eigvalsh(self.prior_precision))), 1e-300)
        base = 1.0 / (2.0 * lam_max + self.eta * (np.sum(self._zmat**2) + 1.0))
        best, best_val = u.copy(), self._neg_log_post(u)
        for k in range(1, iters + 1):
            u = u - (base / math.sqrt(k)) * self._subgrad(u)
            val = self._neg_log_post(u)
            if val < best_val:
                best, best_val = u.copy(), val
        self._mode = best
        return best

    def _axes(self, order=6, extra_kinks=True):
        mode = self._find_mode()
        r = self.rank
        prior_diag = np.diag(self.prior_precision)
        axes = []
        for j in range(r):
            prior_w = 1.0 / math.sqrt(2.0 * max(prior_diag[j], 1e-300))
            data_scale = prior_w
            if len(self.ys):
                slope = self.eta * float(np.sum(np.abs(self._zmat[:, j])))
                if slope > 0:
                    data_scale = min(prior_w, 1.0 / slope)
            outer = abs(mode[j]) + 14.0 * prior_w
            extra = [0.0]
            if extra_kinks and len(self.ys) and r == 1:
                zcol = self._zmat[:, 0]
                nz = zcol[np.abs(zcol) > 1e-12]
                extra += list((self.gamma / nz)) + list((-self.gamma / nz))
            bps = quadrature.axis_breakpoints([mode[j]], [data_scale], outer,
                                              extra=extra)
            axes.append(quadrature.panel_rule(bps, order=order))
        return axes

    def predict(self, x, order=6) -> float:
        """Posterior mean of clip_gamma(<x, theta>)."""
        z = self.to_span(x)
        if not self.ys:
            return 0.0  # symmetric prior
        axes = self._axes(order=order)
        pts, logw = quadrature.tensor_grid(axes)
        lp = self.log_post_batch(pts) + logw
        shift = lp.max()
        w = np.exp(lp - shift)
        clipped = np.clip(pts @ z, -self.gamma, self.gamma)
        return float(w @ clipped / w.sum())

    def log_post_batch(self, U):
        out = -np.einsum("ij,jk,ik->i", U, self.prior_precision, U)
        if len(self.ys):
            margins = self.gamma - self._yvec * (U @ self._zmat.T)
            out = out - self.eta * np.sum(np.maximum(margins, 0.0), axis=1)
        return out


def run_algorithm2(design: DesignSet, sequence, gamma: float, eta: float,
                   alpha: float | None = None, budget: int = 10**7,
                   quad_order: int | None = None) -> RegretTrace:
    """Aggregation over hinge slab-experts (halfspace-pair behaviors).

    Outside-slab experts predict gamma * sign; in-slab experts predict the
    clipped posterior mean of their partial EWA.  Weights are proportional to
    exp(-eta * cumulative unnormalised hinge loss); every expert weight stays
    finite, so no expert is ever removed.
    """
    T = design.size
    d = design.dim
    if eta < 0 or eta * gamma > 0.3 + 1e-12:
        raise DomainError("eta must lie in [0, 3/(10 gamma)]")
    if alpha is None:
        alpha = 1.0 / (gamma**2 * T**3)
    if quad_order is None:
        quad_order = 8 if design.rank <= 1 else 5
    behaviors, diag = enumerate_pair_behaviors(design, budget)
    patterns = np.array(behaviors, dtype=np.int8)
    n_exp = len(patterns)
    mask_index = {}
    mask_ewa = []
    expert_mask_id = np.zeros(n_exp, dtype=np.int64)
    for e, pattern in enumerate(patterns):
        mask = pattern == 0
        key = mask.tobytes()
        if key not in mask_index:
            mask_index[key] = len(mask_ewa)
            members = [design.covariates[i] for i in np.flatnonzero(mask)]
            mask_ewa.append(HingePartialEwa(members, alpha, eta, gamma)
                            if members else None)
        expert_mask_id[e] = mask_index[key]
    prob = ProblemSpec(m=1.0, loss_kind="hinge", gamma=gamma)
    comp = solve_comparator(list(sequence), prob, 0.0)
    ys = np.array([ex.y for ex in sequence])
    xs = np.array([ex.x for ex in sequence])
    comp_losses = np.maximum(gamma - ys * (xs @ comp.theta), 0.0) / gamma
    scale = (1.0 + 2.0 * eta * gamma) ** 2
    slack = hinge_slab_bound(d, T)
    trace = RegretTrace(meta={"kind": "hinge-slab", "gamma": gamma, "eta": eta,
                              "alpha": alpha, "pool": diag,
                              "comparator_separable": comp.separable,
                              "comparator_theta": comp.theta.tolist()})
    logw = np.zeros(n_exp)
    used = set()
    for t, ex in enumerate(sequence):
        idx = design.index_of(ex.x, used)
        used.add(idx)
        col = patterns[:, idx]
        in_slab = col == 0
        needed = np.unique(expert_mask_id[in_slab]) if np.any(in_slab) else []
        mask_p = {mid: mask_ewa[mid].predict(ex.x, order=quad_order)
                  for mid in needed}
        preds = np.where(col == 1, gamma, -gamma).astype(float)
        if np.any(in_slab):
            preds[in_slab] = [mask_p[m] for m in expert_mask_id[in_slab]]
        w = np.exp(logw - logw.max())
        w /= w.sum()
        fhat = float(w @ preds)
        loss = max(gamma - ex.y * fhat, 0.0) / gamma
        logw = logw - eta * np.maximum(gamma - ex.y * preds, 0.0)
        for mid in needed:
            mask_ewa[mid].update(ex.x, ex.y)
        comp_cum = float(np.sum(comp_losses[:t + 1]))
        trace.append(fhat, loss, comp_cum, scale * comp_cum + slack)
    return trace
