"""Transductive logistic regression: partial exponential weights with the
design-dependent Gaussian prior, slab-experts, hard-margin SVM enumeration of
halfspaces, generalized slab-experts, and the aggregation loop.

Expert pools are grouped by slab membership mask: all experts sharing a mask
share one partial-EWA posterior, which keeps enumeration-scale pools cheap.
Deterministic outside-slab predictions use exact 0/1 probabilities; a wrong
one zeroes the expert's weight (log weight -inf), while per-expert diagnostic
losses are capped at 50 log T with an infinite flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.special import logsumexp

from . import quadrature
from .core import (DesignSet, LabeledExample, ProblemSpec, RegretTrace,
                   log_sigmoid, sigmoid, sign, solve_comparator, span_basis)
from .errors import IntractableScale, NotInSlab
from .samplers import SamplerConfig, hoeffding_budget, lmc_sample

_WEIGHT_TOL = 1e-12
_GRID_CACHE: dict = {}


def logistic_mix_identity(thetas, probs, x, y):
    """Both sides of the 1-mixability identity for a finite mixture."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    probs = np.asarray(probs, dtype=float)
    x = np.asarray(x, dtype=float)
    margins = y * (thetas @ x)
    lhs = -logsumexp(np.log(probs) + log_sigmoid(margins))
    losses = -log_sigmoid(margins)
    rhs = -logsumexp(np.log(probs) - losses)
    return float(lhs), float(rhs)


class PartialEwa:
    """Exponential weights with logistic loss restricted to the subset K.

    Prior: Gaussian with precision alpha * sum_{x in K} x x^T, realised on the
    span of that Gram matrix (pseudo-inverse semantics off-span).  Prediction
    at x in K is the posterior mean of sigma(<x, theta>).
    """

    def __init__(self, covariates, alpha: float):
        xs = np.atleast_2d(np.array([np.asarray(c, float) for c in covariates]))
        self.alpha = float(alpha)
        self.V = span_basis(xs)
        self.Z_design = xs @ self.V
        gram_span = self.Z_design.T @ self.Z_design
        self.prior_precision = self.alpha * gram_span
        self._members = [tuple(c) for c in xs]
        self.zs: list[np.ndarray] = []
        self.ys: list[float] = []
        self._mode = np.zeros(self.V.shape[1])
        self._zmat = np.zeros((0, self.V.shape[1]))
        self._yvec = np.zeros(0)

    @property
    def rank(self) -> int:
        return self.V.shape[1]

    def contains(self, x) -> bool:
        return tuple(np.asarray(x, float)) in self._members

    def to_span(self, x):
        return self.V.T @ np.asarray(x, dtype=float)

    def update(self, x, y):
        self.zs.append(self.to_span(x))
        self.ys.append(float(y))
        self._zmat = np.array(self.zs)
        self._yvec = np.array(self.ys)

    # posterior internals -------------------------------------------------
    def _terms(self, extra):
        """(zs, ys) with an optional extra pseudo-observation appended."""
        if extra is None:
            return self._zmat, self._yvec
        z, y = extra
        return np.vstack([self._zmat, z]), np.append(self._yvec, y)

    def _value(self, u, zs, ys):
        out = float(u @ self.prior_precision @ u)
        if len(ys):
            out -= float(np.sum(log_sigmoid(ys * (zs @ u))))
        return out

    def _grad_hess(self, u, zs, ys):
        g = 2.0 * self.prior_precision @ u
        h = 2.0 * self.prior_precision.copy()
        if len(ys):
            m = ys * (zs @ u)
            s = sigmoid(-m)
            g = g - (ys * s) @ zs
            w = s * (1.0 - s)
            h = h + zs.T @ (zs * w[:, None])
        return g, h

    def _find_mode(self, extra=None):
        """Newton with Armijo value backtracking; multi-start from the warm
        mode and the origin (plateaus of saturated likelihoods leave tiny
        gradients at stale far-out iterates, so value decrease governs)."""
        zs, ys = self._terms(extra)
        best_u, best_v = None, np.inf
        for u0 in (self._mode.copy(), np.zeros_like(self._mode)):
            u = u0
            val = self._value(u, zs, ys)
            for _ in range(80):
                g, h = self._grad_hess(u, zs, ys)
                if np.linalg.norm(g) <= 1e-10 * (1.0 + abs(val)):
                    break
                try:
                    step = np.linalg.solve(h, g)
                except np.linalg.LinAlgError:
                    step = np.linalg.lstsq(h, g, rcond=None)[0]
                scale, improved = 1.0, False
                for _ in range(70):
                    cand = u - scale * step
                    v2 = self._value(cand, zs, ys)
                    if v2 < val - 1e-12 * abs(val):
                        u, val, improved = cand, v2, True
                        break
                    scale *= 0.5
                if not improved:
                    break
            if val < best_v:
                best_u, best_v = u, val
        _, h = self._grad_hess(best_u, zs, ys)
        if extra is None:
            self._mode = best_u.copy()
        return best_u, h

    def _log_post_batch(self, U, zs, ys):
        out = -np.einsum("ij,jk,ik->i", U, self.prior_precision, U)
        if len(ys):
            out = out + np.sum(log_sigmoid(ys * (U @ zs.T)), axis=1)
        return out

    def log_partition(self, extra=None, order: int = 8, panels: int = 16) -> float:
        """log of the Gaussian-prior-tilted likelihood integral, up to the
        prior's normalising constant (which cancels in every ratio used).

        The integrand is log-concave, so a mode-whitened composite grid gives
        small relative error at every prior scale.
        """
        zs, ys = self._terms(extra)
        mode, hess = self._find_mode(extra)
        C, v_max = self._whitened_transform(hess)
        pts_v, logw = self._v_grid(v_max, order, panels)
        U = mode + pts_v @ C.T
        lp = self._log_post_batch(U, zs, ys) + logw
        sign_det, logdet = np.linalg.slogdet(C)
        return float(logsumexp(lp) + logdet)

    def _whitened_transform(self, hess):
        if hess.shape[0] == 1:
            lam = max(float(hess[0, 0]), 1e-300)
            C = np.array([[1.0 / math.sqrt(lam)]])
            lam_p = 2.0 * max(float(self.prior_precision[0, 0]), 1e-300) / lam
        else:
            lam, E = np.linalg.eigh(hess)
            lam = np.maximum(lam, 1e-300)
            C = E * (1.0 / np.sqrt(lam))
            pv = C.T @ (2.0 * self.prior_precision) @ C
            lam_p = max(float(np.min(np.linalg.eigvalsh(pv))), 1e-300)
        v_max = max(12.0, 12.0 / math.sqrt(lam_p))
        return C, v_max

    def _v_grid(self, v_max, order, panels):
        # the v-space grid depends only on (v_max bucket, order, panels)
        key = (round(math.log2(v_max), 1), order, panels)
        cached = _GRID_CACHE.get((self.rank,) + key)
        if cached is None:
            axes, _ = quadrature.gauss_hermite_axes(
                np.zeros(self.rank), np.eye(self.rank), v_max, order, panels)
            cached = quadrature.tensor_grid(axes)
            _GRID_CACHE[(self.rank,) + key] = cached
        return cached

    def predict(self, x, backend: str = "quadrature",
                sampler: SamplerConfig | None = None, horizon: int | None = None,
                order: int = 8, panels: int = 16) -> float:
        """p(+1) at a covariate of K.  Raises NotInSlab for foreign points.

        Computed as the partition-function ratio Z(+1)/(Z(+1) + Z(-1)) of the
        two pseudo-label posteriors; since sigma(z) + sigma(-z) = 1 these sum
        exactly to the plain partition function, so the assignment is a true
        probability with small relative error on both labels.
        """
        if not self.contains(x):
            raise NotInSlab(f"{x} is not in this expert's subset")
        z = self.to_span(x)
        if not self.zs:
            return 0.5  # symmetric prior
        if backend == "lmc":
            return self._predict_lmc(z, sampler, horizon)
        lz_plus = self.log_partition(extra=(z, 1.0), order=order, panels=panels)
        lz_minus = self.log_partition(extra=(z, -1.0), order=order, panels=panels)
        return float(1.0 / (1.0 + math.exp(min(lz_minus - lz_plus, 700.0))))

    def _predict_lmc(self, z, sampler, horizon):
        T = horizon or max(len(self.ys), 2)
        cfg = sampler or SamplerConfig(epsilon=1.0 / T, delta=1.0 / T**2)
        n = hoeffding_budget(1.0, cfg.epsilon, cfg.delta)
        zs = np.array(self.zs)
        ys = np.array(self.ys)
        P2 = 2.0 * self.prior_precision

        def grad(U):
            margins = ys * (U @ zs.T)
            s = sigmoid(-margins)
            return (s * ys) @ zs - U @ P2

        mode, hess = self._find_mode()
        # step sized by the smoothness of the log posterior
        lip = float(np.max(np.linalg.eigvalsh(hess)))
        cfg_local = SamplerConfig(
            epsilon=cfg.epsilon, delta=cfg.delta,
            step_size=min(cfg.step_size, 0.25 / max(lip, 1e-12)),
            burn_in=cfg.burn_in, n_chains=cfg.n_chains,
            master_seed=cfg.master_seed, thin=cfg.thin,
            max_samples=cfg.max_samples)
        draws = lmc_sample(grad, mode, cfg_local, n)
        return float(np.mean(sigmoid(draws @ z)))


def partial_ewa_predict(state: PartialEwa, x, backend: str = "quadrature",
                        sampler=None, horizon=None):
    """Probability assignment (p(+1), p(-1)) of the partial EWA at x."""
    p = state.predict(x, backend=backend, sampler=sampler, horizon=horizon)
    return p, 1.0 - p


# --------------------------------------------------------------------------
# hard-margin SVM (dual coordinate ascent in the bias-augmented space)
# --------------------------------------------------------------------------

@dataclass
class SvmResult:
    separable: bool
    theta: np.ndarray
    bias: float
    support_set: list

    def decision(self, x) -> float:
        return float(np.asarray(x, float) @ self.theta - self.bias)

    def predict(self, x) -> int:
        return sign(self.decision(x))


def _kkt_active_set(aug, ys, tol=1e-9):
    """Exact hard-margin dual optimum of a tiny instance by support-set
    enumeration.  Returns alpha or None when no KKT point exists (i.e. the
    labeling is not separable)."""
    n = len(ys)
    q = (ys[:, None] * aug) @ (ys[:, None] * aug).T
    for size in range(1, n + 1):
        for sub in combinations(range(n), size):
            idx = list(sub)
            qss = q[np.ix_(idx, idx)]
            a_s, residual, *_ = np.linalg.lstsq(qss, np.ones(size), rcond=None)
            if np.max(np.abs(qss @ a_s - 1.0)) > tol:
                continue
            if np.min(a_s) < -tol:
                continue
            alpha = np.zeros(n)
            alpha[idx] = np.maximum(a_s, 0.0)
            if np.min(q @ alpha) >= 1.0 - 1e-7:
                return alpha
    return None


def _separable_lp(aug, ys) -> bool:
    """Feasibility of y_i <w, aug_i> >= 1 via an LP (HiGHS)."""
    from scipy.optimize import linprog
    n, d = aug.shape
    res = linprog(np.zeros(d), A_ub=-(ys[:, None] * aug), b_ub=-np.ones(n),
                  bounds=[(None, None)] * d, method="highs")
    return bool(res.success)


def hard_margin_svm(points, homogeneous: bool = False,
                    tol: float = 1e-10, max_iters: int = 400_000) -> SvmResult:
    """Maximum-margin separator via the hard-margin dual.

    The bias is realised by augmenting covariates with a constant unit
    coordinate, which keeps the dual box-constrained (no equality constraint)
    while preserving which labelings are separable; the augmentation constant
    is fixed so that re-solving on the support set is the same optimisation
    problem (stationarity).  Tiny instances (no more points than the lifted
    dimension plus one) are solved exactly by KKT support enumeration; larger
    ones check separability with a feasibility LP and then run coordinate
    ascent with greedy (most-violating, deterministic tie-break) index
    selection to duality gap <= tol.
    """
    xs = np.array([np.asarray(ex.x, dtype=float) for ex in points])
    ys = np.array([float(ex.y) for ex in points])
    n, d = xs.shape
    if homogeneous:
        aug = xs
    else:
        big_r = 1.0
        aug = np.hstack([xs, np.full((n, 1), big_r)])
    dim_aug = aug.shape[1]

    def package(alpha):
        w = (alpha * ys) @ aug
        support_idx = np.flatnonzero(alpha > 1e-8 * max(np.max(alpha), 1e-300))
        cap = d if homogeneous else d + 1
        if len(support_idx) > cap:
            support_idx = support_idx[np.argsort(alpha[support_idx])[::-1][:cap]]
        support = [points[i] for i in sorted(support_idx)]
        if homogeneous:
            res = SvmResult(True, w.copy(), 0.0, support)
        else:
            res = SvmResult(True, w[:d].copy(), -w[d] * big_r, support)
        # compress to a fixed point so SVM(support) reproduces the output;
        # weakly-active points otherwise flip support membership numerically
        if len(support) < n:
            inner = hard_margin_svm(support, homogeneous=homogeneous, tol=tol)
            if inner.separable and all(inner.predict(p.x) == p.y for p in points):
                return inner
        return res

    if n <= dim_aug + 1:
        alpha = _kkt_active_set(aug, ys)
        if alpha is None:
            return SvmResult(False, np.zeros(d), 0.0, [])
        return package(alpha)

    if not _separable_lp(aug, ys):
        return SvmResult(False, np.zeros(d), 0.0, [])
    norms = np.sum(aug**2, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    alpha = np.zeros(n)
    w = np.zeros(dim_aug)
    for _ in range(max_iters):
        margins = ys * (aug @ w)
        # projected-gradient violation of each dual coordinate
        grad = 1.0 - margins
        viol = np.where(alpha > 0, np.abs(grad), np.maximum(grad, 0.0))
        viol[norms == 0] = 0.0
        i = int(np.argmax(viol))
        if viol[i] <= 1e-14:
            break
        new_a = max(0.0, alpha[i] + grad[i] / safe[i])
        delta = new_a - alpha[i]
        alpha[i] = new_a
        w = w + delta * ys[i] * aug[i]
        dual = float(np.sum(alpha) - 0.5 * w @ w)
        if dual > 1e12:
            return SvmResult(False, np.zeros(d), 0.0, [])
        min_margin = float(np.min(margins))
        if min_margin > 0:
            primal = 0.5 * float(w @ w) / min_margin**2
            if primal - dual <= tol * (1.0 + abs(primal)):
                break
    return package(alpha)


# --------------------------------------------------------------------------
# expert pools
# --------------------------------------------------------------------------

@dataclass
class ExpertPool:
    """Generalized slab-experts grouped by their shared slab masks."""

    design: DesignSet
    alpha: float
    masks: list = field(default_factory=list)           # bool arrays over design
    mask_ewa: list = field(default_factory=list)        # PartialEwa per mask
    expert_mask_id: np.ndarray = None                   # (n_experts,)
    patterns: np.ndarray = None                         # (n_experts, T) in {-1,0,+1}
    log_weights: np.ndarray = None
    capped_cum_loss: np.ndarray = None
    infinite: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def finalize(self, mask_ids, patterns):
        self.expert_mask_id = np.asarray(mask_ids, dtype=np.int64)
        self.patterns = np.asarray(patterns, dtype=np.int8)
        n = len(self.expert_mask_id)
        self.log_weights = np.zeros(n)
        self.capped_cum_loss = np.zeros(n)
        self.infinite = np.zeros(n, dtype=bool)

    @property
    def size(self) -> int:
        return len(self.expert_mask_id)

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        finite = np.isfinite(lw)
        if not np.any(finite):
            raise IntractableScale("all experts have zero weight")
        out = np.zeros_like(lw)
        out[finite] = np.exp(lw[finite] - logsumexp(lw[finite]))
        return out


def _mask_registry(design, alpha):
    masks, ewas, index = [], [], {}

    def get_id(mask: np.ndarray) -> int:
        key = mask.tobytes()
        if key not in index:
            index[key] = len(masks)
            masks.append(mask.copy())
            members = [design.covariates[i] for i in np.flatnonzero(mask)]
            if members:
                ewas.append(PartialEwa(members, alpha))
            else:
                ewas.append(None)
        return index[key]

    return masks, ewas, get_id


def enumerate_halfspaces(design: DesignSet, budget: int = 10**7):
    """All halfspace dichotomies of the design via SVM on labeled subsets.

    Every subset of at most d+1 covariates and every labeling is compressed
    through the hard-margin SVM; the realised sign patterns are collected.
    Returns (list of plus-masks, theta/bias list, number of SVM calls).
    """
    T, d = design.size, design.dim
    max_k = min(d + 1, T)
    n_calls_cap = sum(math.comb(T, k) * 2**k for k in range(1, max_k + 1))
    if (2 * T) ** (d + 1) > budget or n_calls_cap > budget:
        raise IntractableScale(
            f"(2T)^(d+1) = {(2*T)**(d+1)} exceeds budget {budget}")
    X = design.matrix
    seen = {}
    calls = 0
    for k in range(1, max_k + 1):
        for subset in combinations(range(T), k):
            pts_x = [design.covariates[i] for i in subset]
            for labels in product((-1.0, 1.0), repeat=k):
                calls += 1
                res = hard_margin_svm(
                    [LabeledExample(x, y) for x, y in zip(pts_x, labels)])
                if not res.separable:
                    continue
                vals = X @ res.theta - res.bias
                plus = vals >= 0.0
                key = plus.tobytes()
                if key not in seen:
                    seen[key] = (plus, res)
    halfspaces = [v[0] for v in seen.values()]
    results = [v[1] for v in seen.values()]
    return halfspaces, results, calls


def enumerate_pair_behaviors(design: DesignSet, budget: int = 10**7):
    """Distinct (slab mask, outside sign pattern) behaviors of all admissible
    halfspace pairs, plus enumeration diagnostics."""
    halfspaces, _, calls = enumerate_halfspaces(design, budget)
    H = np.array(halfspaces)  # (n_h, T) bool, True = plus side
    plus = H
    minus = ~H
    # pair (i, j) is admissible iff minus_i and plus_j are disjoint
    compat = (minus.astype(np.int64) @ plus.T.astype(np.int64)) == 0
    seen = set()
    behaviors = []
    for i, j in zip(*np.nonzero(compat)):
        pattern = np.zeros(design.size, dtype=np.int8)
        pattern[minus[i]] = -1
        pattern[plus[j]] = 1
        key = pattern.tobytes()
        if key in seen:
            continue
        seen.add(key)
        behaviors.append(pattern)
    diag = {"svm_calls": calls, "n_halfspaces": len(halfspaces),
            "n_experts": len(behaviors), "mode": "enumerate"}
    return behaviors, diag


def enumerate_generalized_slab_experts(design: DesignSet, alpha: float,
                                       budget: int = 10**7) -> ExpertPool:
    """All halfspace-pair experts, deduplicated by (slab mask, outside signs)."""
    behaviors, diag = enumerate_pair_behaviors(design, budget)
    pool = ExpertPool(design, alpha)
    masks, ewas, get_id = _mask_registry(design, alpha)
    mask_ids = [get_id(pattern == 0) for pattern in behaviors]
    pool.masks = masks
    pool.mask_ewa = ewas
    pool.finalize(mask_ids, behaviors)
    pool.diagnostics = diag
    return pool


def sample_random_halfspace(design: DesignSet, rng) -> tuple:
    """One (subset, labels, SVM) draw; returns (plus_mask, accepted)."""
    T, d = design.size, design.dim
    k = min(d + 1, T)
    subset = rng.choice(T, size=k, replace=False)
    labels = rng.choice([-1.0, 1.0], size=k)
    res = hard_margin_svm([LabeledExample(design.covariates[i], y)
                           for i, y in zip(subset, labels)])
    if not res.separable:
        return None, False
    vals = design.matrix @ res.theta - res.bias
    return vals >= 0.0, True


def sample_generalized_slab_experts(design: DesignSet, alpha: float, n: int,
                                    seed) -> ExpertPool:
    """Rejection-sample n experts: two independent halfspace draws each,
    rejected when the SVM labeling is non-separable or the pair is
    incompatible.  Rejection counts land in the diagnostics."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    pool = ExpertPool(design, alpha)
    masks, ewas, get_id = _mask_registry(design, alpha)
    mask_ids, patterns = [], []
    svm_rejections = pair_rejections = 0
    guard = 0
    while len(mask_ids) < n:
        guard += 1
        if guard > 1000 * max(n, 1) + 1000:
            break
        drawn = []
        ok = True
        while len(drawn) < 2:
            plus, accepted = sample_random_halfspace(design, rng)
            if not accepted:
                svm_rejections += 1
                continue
            drawn.append(plus)
        plus1, plus2 = drawn
        minus1 = ~plus1
        if np.any(minus1 & plus2):
            pair_rejections += 1
            continue
        pattern = np.zeros(design.size, dtype=np.int8)
        pattern[minus1] = -1
        pattern[plus2] = 1
        mask_ids.append(get_id(pattern == 0))
        patterns.append(pattern)
    pool.masks = masks
    pool.mask_ewa = ewas
    if mask_ids:
        pool.finalize(mask_ids, patterns)
    else:
        pool.finalize(np.zeros(0, dtype=np.int64), np.zeros((0, design.size), dtype=np.int8))
    pool.diagnostics = {"svm_rejections": svm_rejections,
                        "pair_rejections": pair_rejections,
                        "n_experts": len(mask_ids), "mode": "sample"}
    return pool


# --------------------------------------------------------------------------
# Def 3.2 slab-expert
# --------------------------------------------------------------------------

@dataclass
class SlabExpert:
    """Expert with its own vector theta: defers to a partial EWA on the slab
    { x : |<x, theta>| <= T } and predicts sign(<x, theta>) outside."""

    theta: np.ndarray
    alpha: float
    design: DesignSet
    slab_mask: np.ndarray = field(init=False)
    outside_sign: np.ndarray = field(init=False)
    ewa: PartialEwa | None = field(init=False)

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        vals = self.design.matrix @ self.theta
        T = self.design.size
        self.slab_mask = np.abs(vals) <= T
        self.outside_sign = np.array([sign(v) for v in vals], dtype=np.int8)
        members = [self.design.covariates[i] for i in np.flatnonzero(self.slab_mask)]
        self.ewa = PartialEwa(members, self.alpha) if members else None

    def in_slab(self, idx: int) -> bool:
        return bool(self.slab_mask[idx])

    def predict(self, idx: int, backend="quadrature") -> tuple:
        x = self.design.covariates[idx]
        if self.in_slab(idx):
            p = self.ewa.predict(x, backend=backend)
            return p, 1.0 - p
        return (1.0, 0.0) if self.outside_sign[idx] > 0 else (0.0, 1.0)

    def update(self, idx: int, y: float):
        if self.in_slab(idx):
            self.ewa.update(self.design.covariates[idx], y)


def slab_expert_predict(expert: SlabExpert, x) -> tuple:
    idx = expert.design.index_of(np.asarray(x, float))
    return expert.predict(idx)


# --------------------------------------------------------------------------
# Algorithm: aggregation over slab-experts
# --------------------------------------------------------------------------

def algorithm1_bound(d: int, T: int) -> float:
    return 11.0 * d * math.log(math.e * T)


def partial_ewa_bound(d: int, T: int) -> float:
    return 2.0 * d * math.log(T)


def margin_mistake_check(sequence, theta, threshold: float):
    """Rounds where the comparator errs must have margin <= threshold.

    Returns the list of violating round indices (1-based); empty means pass.
    """
    bad = []
    for t, ex in enumerate(sequence, start=1):
        v = float(np.asarray(ex.x, float) @ theta)
        if ex.y * v <= 0 and abs(v) > threshold:
            bad.append(t)
    return bad


def _group_logsumexp(values, group_ids, n_groups):
    """Per-group log-sum-exp over a flat array (groups need not be sorted)."""
    gmax = np.full(n_groups, -np.inf)
    np.maximum.at(gmax, group_ids, values)
    shifted = np.zeros(n_groups)
    finite = np.isfinite(values)
    contrib = np.exp(values[finite] - gmax[group_ids[finite]])
    np.add.at(shifted, group_ids[finite], contrib)
    with np.errstate(divide="ignore"):
        return gmax + np.where(shifted > 0, np.log(np.maximum(shifted, 1e-300)), 0.0)


def run_algorithm1(design: DesignSet, sequence, pool_source="enumerate",
                   alpha: float | None = None, seed=0,
                   quad_order: int | None = None, quad_panels: int | None = None,
                   budget: int = 10**7,
                   prune_tail_mass: float | None = 1e-6) -> RegretTrace:
    """Aggregation over generalized slab-experts with likelihood weights.

    ``pool_source`` is "enumerate" or ("sample", n).  Weights follow
    p_t(B) proportional to exp(sum_{i<t} log B(x_i, y_i)); the loss column is
    the aggregate log loss, the comparator column the ridge-proxy logistic
    comparator, and the bound column adds 11 d log(eT) (enumerate mode) or the
    reported sampling slack.

    Experts whose weight hits exactly zero (a wrong deterministic outside
    prediction) are removed exactly.  Additionally, per round the lightest
    experts carrying a combined relative mass below ``prune_tail_mass`` are
    frozen out permanently.  The discarded relative mass can grow against the
    pool by at most the best live expert's subsequent loss, which yields a
    certified running bound; recorded losses are overstated by that bound, so
    bound checks stay conservative, and the run restarts without pruning if
    the bound ever degrades past 1e-3.
    """
    T = design.size
    d = design.dim
    if alpha is None:
        alpha = 1.0 / T**3
    # grid sizes trade accuracy against the pool-size * rounds budget;
    # bound checks only need ~1e-5 relative accuracy on probabilities
    if quad_order is None:
        quad_order = 8 if design.rank <= 1 else 5
    if quad_panels is None:
        quad_panels = 16 if design.rank <= 1 else 8
    if pool_source == "enumerate":
        pool = enumerate_generalized_slab_experts(design, alpha, budget)
    else:
        _, n = pool_source
        pool = sample_generalized_slab_experts(design, alpha, n, seed)
    spec = ProblemSpec(m=1.0, loss_kind="logistic")
    comp = solve_comparator(list(sequence), spec, ridge=1e-8)
    comp_losses = np.array([-log_sigmoid(ex.y * float(ex.x @ comp.theta))
                            for ex in sequence])
    if pool_source == "enumerate":
        slack = algorithm1_bound(d, T)
    else:
        slack = partial_ewa_bound(d, T) + math.log(max(pool.size, 1))
    trace = RegretTrace(meta={"kind": "logistic-slab", "alpha": alpha,
                              "pool": pool.diagnostics,
                              "comparator_separable": comp.separable,
                              "comparator_theta": comp.theta.tolist(),
                              "asserted": pool_source == "enumerate"})
    cap = 50.0 * math.log(max(T, 2))
    live = np.ones(pool.size, dtype=bool)
    removal_bound = 0.0   # certified bound on discarded relative mass
    best_live_loss = 0.0  # min cumulative loss among live experts
    used = set()
    for t, ex in enumerate(sequence):
        idx = design.index_of(ex.x, used)
        used.add(idx)
        lw = pool.log_weights
        if prune_tail_mass is not None and np.count_nonzero(live) > 1:
            live_ix = np.flatnonzero(live)
            vals = lw[live_ix]
            total = logsumexp(vals)
            order_ix = np.argsort(vals)
            tail = np.logaddexp.accumulate(vals[order_ix])
            cut = int(np.searchsorted(tail, total + math.log(prune_tail_mass),
                                      side="left"))
            cut = min(cut, len(live_ix) - 1)
            if cut > 0:
                dropped = live_ix[order_ix[:cut]]
                live[dropped] = False
                removed_rel = math.exp(tail[cut - 1] - total)
                # future growth multiplier is exp(best live expert's loss so far
                # subtracted later); normalise the event to "now"
                removal_bound = removal_bound + removed_rel * math.exp(-best_live_loss)
        col = pool.patterns[:, idx]
        in_slab = (col == 0) & live
        needed = np.unique(pool.expert_mask_id[in_slab]) if np.any(in_slab) else []
        mask_p = {}
        for mid in needed:
            mask_p[mid] = pool.mask_ewa[mid].predict(
                ex.x, order=quad_order, panels=quad_panels)
        p_plus = np.where(col == 1, 1.0, 0.0)
        if np.any(in_slab):
            p_plus[in_slab] = [mask_p[m] for m in pool.expert_mask_id[in_slab]]
        live_lse = logsumexp(lw[live])
        w = np.zeros(pool.size)
        w[live] = np.exp(lw[live] - live_lse)
        agg_plus = float(w @ p_plus)
        p_y = agg_plus if ex.y > 0 else 1.0 - agg_plus
        # conservative loss: discount by the certified discarded mass
        rem_now = min(removal_bound * math.exp(best_live_loss), 1.0)
        loss = -math.log(max(p_y - rem_now, 1e-300))
        # weight and diagnostic updates for live experts
        p_expert_y = p_plus if ex.y > 0 else 1.0 - p_plus
        with np.errstate(divide="ignore"):
            log_p = np.where(live, np.log(np.maximum(p_expert_y, 0.0)), 0.0)
        pool.log_weights = pool.log_weights + log_p
        newly_dead = live & ~np.isfinite(pool.log_weights)
        pool.infinite |= newly_dead
        live &= np.isfinite(pool.log_weights)
        pool.capped_cum_loss[live] += np.minimum(-log_p[live], cap)
        pool.capped_cum_loss[newly_dead] += cap
        if np.any(live):
            best_live_loss = float(np.min(pool.capped_cum_loss[live]))
        # condition every mask containing x_t that still backs a live expert
        for mid in needed:
            pool.mask_ewa[mid].update(ex.x, ex.y)
        comp_cum = float(np.sum(comp_losses[:t + 1]))
        trace.append(agg_plus, loss, comp_cum, comp_cum + slack)
        if rem_now > 1e-3 and prune_tail_mass is not None:
            return run_algorithm1(design, sequence, pool_source, alpha, seed,
                                  quad_order, quad_panels, budget,
                                  prune_tail_mass=None)
    trace.meta["removed_mass_bound"] = min(removal_bound * math.exp(best_live_loss), 1.0)
    trace.meta["n_live"] = int(np.count_nonzero(live))
    return trace
