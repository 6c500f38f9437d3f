"""Online-to-batch conversion and the two-expert batch logistic pipeline.

The conversion wraps any transductive algorithm exposing predict/update over
a design that includes the test covariate, and averages the T+1 per-round
predictors.  The batch logistic algorithm aggregates a full-design partial
EWA with a clipped linear separator pretrained by a homogeneous hard-margin
SVM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DesignSet, LabeledExample, sign
from .errors import DomainError
from .logistic import PartialEwa, hard_margin_svm


@dataclass
class SphereLogisticModel:
    """X uniform on the sqrt(d)-sphere, P(Y = y | X) = sigma(y <X, theta*>)."""

    theta_star: np.ndarray
    d: int

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)
        if self.theta_star.shape != (self.d,):
            raise DomainError("theta_star dimension mismatch")

    def draw_x(self, n, rng):
        g = rng.standard_normal((n, self.d))
        return math.sqrt(self.d) * g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass
class GaussianLogisticModel:
    """Standard Gaussian covariates with the same conditional label law."""

    theta_star: np.ndarray
    d: int

    def __post_init__(self):
        self.theta_star = np.asarray(self.theta_star, dtype=float)

    def draw_x(self, n, rng):
        return rng.standard_normal((n, self.d))


def generate_sphere_logistic(model, n: int, seed) -> list:
    """n i.i.d. labeled draws from the model."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if n == 0:
        return []
    xs = model.draw_x(n, rng)
    z = xs @ model.theta_star
    p_plus = np.exp(-np.logaddexp(0.0, -z))
    ys = np.where(rng.random(n) < p_plus, 1.0, -1.0)
    return [LabeledExample(xs[i], float(ys[i])) for i in range(n)]


@dataclass
class ClippedLinearSeparator:
    """Probability 1 - 1/(2T) on the halfspace-predicted label, 1/(2T) on the
    other; the per-point log loss is therefore capped at log(2T)."""

    theta: np.ndarray
    T: int

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.T <= 1:
            raise DomainError("clipped separator needs T > 1")

    def predict_proba(self, x, y) -> float:
        agree = sign(y * float(np.asarray(x, float) @ self.theta))
        return 1.0 - 1.0 / (2.0 * self.T) if agree > 0 else 1.0 / (2.0 * self.T)


def clipped_separator_predict(sep: ClippedLinearSeparator, x, y) -> float:
    return sep.predict_proba(x, y)


def online_to_batch(algorithm_factory, train, test_x):
    """Average the T+1 sequential predictions at the test covariate.

    ``algorithm_factory(design)`` must return an object with ``predict(x)``
    and ``update(x, y)``; the design passed in contains the training
    covariates plus the test point (order canonicalised by DesignSet).
    Predictions may be reals or probability pairs; they are averaged
    componentwise.
    """
    test_x = np.asarray(test_x, dtype=float)
    design = DesignSet([ex.x for ex in train] + [test_x])
    alg = algorithm_factory(design)
    preds = []
    for ex in train:
        preds.append(np.asarray(alg.predict(test_x), dtype=float))
        alg.update(ex.x, ex.y)
    preds.append(np.asarray(alg.predict(test_x), dtype=float))
    return np.mean(preds, axis=0)


class TransductiveRidgeAlgorithm:
    """The fixed-design squared-loss predictor in online_to_batch form."""

    def __init__(self, design: DesignSet, lam: float):
        from .ridge import RidgeState
        self.V = design.span_basis
        A = lam * (self.V.T @ design.gram @ self.V)
        self.state = RidgeState(A)

    def predict(self, x):
        return self.state.predict_vaw(self.V.T @ np.asarray(x, float))

    def update(self, x, y):
        self.state.update(self.V.T @ np.asarray(x, float), y)


def run_algorithm3(train, pretrain, test_x, quad_order: int = 4,
                   quad_panels: int = 6):
    """Two-expert batch logistic aggregation with SVM pretraining.

    Returns the averaged probability assignment (p(+1), p(-1)) at test_x,
    plus diagnostics.  The EWA expert is the partial exponential weights over
    K = train covariates + test_x at alpha = 1/(T+1)^9; the other expert is
    the clipped linear separator of the pretrained homogeneous SVM (fallback
    e_1 when the pretraining set is not separable).
    """
    T = len(train)
    if len(pretrain) != T:
        raise DomainError("pretrain size must match train size")
    test_x = np.asarray(test_x, dtype=float)
    d = len(test_x)
    svm = hard_margin_svm(list(pretrain), homogeneous=True)
    theta_hat = svm.theta if svm.separable else np.eye(d)[0]
    sep = ClippedLinearSeparator(theta_hat, max(T, 2))
    alpha = 1.0 / (T + 1) ** 9
    ewa = PartialEwa([ex.x for ex in train] + [test_x], alpha)
    log_w = np.zeros(2)  # [EWA, separator]
    p_test = np.zeros(2)
    rounds = list(train) + [LabeledExample(test_x, 1.0)]
    for t, ex in enumerate(rounds):
        w = np.exp(log_w - np.logaddexp(log_w[0], log_w[1]))
        p_ewa_test = ewa.predict(test_x, order=quad_order, panels=quad_panels)
        p_sep_test = sep.predict_proba(test_x, 1.0)
        agg_plus = w[0] * p_ewa_test + w[1] * p_sep_test
        p_test += np.array([agg_plus, 1.0 - agg_plus])
        if t < T:
            p_ewa = ewa.predict(ex.x, order=quad_order, panels=quad_panels)
            p_ewa_y = p_ewa if ex.y > 0 else 1.0 - p_ewa
            p_sep_y = sep.predict_proba(ex.x, ex.y)
            log_w = log_w + np.log([max(p_ewa_y, 1e-300), p_sep_y])
            ewa.update(ex.x, ex.y)
    p_test /= T + 1
    return p_test, {"separable_pretrain": svm.separable,
                    "theta_hat": theta_hat.tolist()}


def comparator_risk(model, n: int, seed) -> float:
    """E[-log sigma(Y <X, theta*>)] by conditional-entropy Monte Carlo."""
    rng = np.random.default_rng(seed)
    xs = model.draw_x(n, rng)
    z = xs @ model.theta_star
    # E_Y[-log p(Y|X)] = H(sigma(z)) computed stably from |z|
    az = np.abs(z)
    log_p = -np.log1p(np.exp(-az))
    log_q = -az - np.log1p(np.exp(-az))
    p = 1.0 / (1.0 + np.exp(-az))
    return float(np.mean(-(p * log_p + (1.0 - p) * log_q)))


def estimate_excess_risk(predictor_factory, model, T: int, n_trials: int,
                         seed) -> tuple:
    """Monte Carlo excess log-loss risk of a batch predictor.

    Each trial draws fresh (train, pretrain, test) data, asks the factory for
    a probability assignment at the test covariate, and scores the expected
    conditional log loss (integrating over Y analytically).  Returns
    (estimate, band) with band = 3 standard errors.
    """
    if n_trials < 30:
        raise DomainError("need at least 30 trials for a CLT band")
    root = np.random.SeedSequence(seed)
    comp = comparator_risk(model, 10**6, root.spawn(1)[0])
    losses = np.zeros(n_trials)
    streams = root.spawn(n_trials + 1)[1:]
    for k in range(n_trials):
        rng = np.random.default_rng(streams[k])
        train = generate_sphere_logistic(model, T, rng)
        pretrain = generate_sphere_logistic(model, T, rng)
        test_x = model.draw_x(1, rng)[0]
        p = predictor_factory(train, pretrain, test_x, rng)
        p_plus = float(p[0])
        z = float(test_x @ model.theta_star)
        sig = 1.0 / (1.0 + np.exp(-z)) if z > -700 else 0.0
        losses[k] = -(sig * math.log(max(p_plus, 1e-300))
                      + (1.0 - sig) * math.log(max(1.0 - p_plus, 1e-300)))
    est = float(np.mean(losses) - comp)
    band = float(3.0 * np.std(losses, ddof=1) / math.sqrt(n_trials))
    return est, band
