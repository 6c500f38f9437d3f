"""Shared domain types, loss functions, clipping, and comparator solvers.

Everything downstream (ridge, sparse, logistic, hinge, batch) builds on the
types here.  All vectors are float64 numpy arrays; all aggregations over
experts elsewhere go through log-sum-exp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import DesignMismatch, DomainError, NonConvergence

SQUARED = "squared"
LOGISTIC = "logistic"
HINGE = "hinge"
LOSS_KINDS = (SQUARED, LOGISTIC, HINGE)

_SPAN_TOL = 1e-10


def clip(value: float, m: float) -> float:
    """Clamp ``value`` to the interval [-m, m]."""
    if m <= 0:
        raise DomainError(f"clip bound must be positive, got {m}")
    return min(m, max(-m, value))


def sign(value: float) -> int:
    """Sign with the fixed convention sign(0) = +1."""
    return 1 if value >= 0 else -1


def log_sigmoid(z):
    """log(sigma(z)), stable for large |z|."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    return np.exp(log_sigmoid(z))


@dataclass(frozen=True)
class LabeledExample:
    """One (covariate, label) pair.

    For regression labels are bounded reals; for classification they are
    exactly +-1.
    """

    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise DomainError("covariate must be a finite 1-d vector")
        object.__setattr__(self, "x", x)
        if not np.isfinite(self.y):
            raise DomainError("label must be finite")


def require_classification(sequence) -> None:
    for ex in sequence:
        if ex.y not in (-1.0, 1.0, -1, 1):
            raise DomainError(f"classification label must be +-1, got {ex.y}")


class DesignSet:
    """The transductively known, unordered covariate collection.

    The internal order is canonicalised (lexicographic) so that any
    permutation of the input produces bit-identical Gram matrices and
    therefore bit-identical downstream predictions.
    """

    def __init__(self, covariates):
        xs = [np.asarray(x, dtype=float) for x in covariates]
        if not xs:
            raise DomainError("design set must be nonempty")
        d = xs[0].shape[0]
        if any(x.shape != (d,) for x in xs):
            raise DomainError("all covariates must share one dimension")
        order = sorted(range(len(xs)), key=lambda i: tuple(xs[i]))
        self.covariates = [xs[i] for i in order]
        self.matrix = np.array(self.covariates)  # T x d
        self.gram = self.matrix.T @ self.matrix
        self.span_basis = span_basis(self.matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def rank(self) -> int:
        return self.span_basis.shape[1]

    def column_norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.matrix**2, axis=0))

    def index_of(self, x: np.ndarray, used=None) -> int:
        """Index of ``x`` in the design, skipping indices in ``used``."""
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.max(np.abs(self.matrix))
        for i, c in enumerate(self.covariates):
            if used is not None and i in used:
                continue
            if np.max(np.abs(c - x)) <= 1e-12 * scale:
                return i
        raise DesignMismatch(f"covariate {x} is not in the design set")


def span_basis(matrix: np.ndarray) -> np.ndarray:
    """Orthonormal basis (d x r) of the row span of a T x d matrix."""
    if matrix.size == 0:
        return np.zeros((matrix.shape[1], 0))
    _, s, vt = np.linalg.svd(matrix, full_matrices=False)
    if s.size == 0:
        return np.zeros((matrix.shape[1], 0))
    r = int(np.sum(s > _SPAN_TOL * s[0])) if s[0] > 0 else 0
    return vt[:r].T


@dataclass
class ProblemSpec:
    """Loss selection plus the constants the bounds depend on.

    ``eta`` defaults to the mixability-compatible rate: 1/(2 m^2) for the
    squared loss and 1 for logistic.  ``gamma`` is only meaningful for hinge.
    """

    m: float
    loss_kind: str
    eta: float | None = None
    gamma: float = 1.0

    def __post_init__(self):
        if self.m <= 0:
            raise DomainError("label bound m must be positive")
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.loss_kind!r}")
        if self.gamma <= 0:
            raise DomainError("hinge margin gamma must be positive")
        if self.eta is None:
            self.eta = 1.0 / (2.0 * self.m**2) if self.loss_kind == SQUARED else 1.0


@dataclass
class TraceRow:
    t: int
    prediction: float
    loss: float
    cum_loss: float
    comparator_loss: float
    bound: float


@dataclass
class RegretTrace:
    """Per-round record of a run plus the theoretical bound column."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, prediction, loss, comparator_loss, bound):
        t = len(self.rows) + 1
        cum = (self.rows[-1].cum_loss if self.rows else 0.0) + loss
        self.rows.append(TraceRow(t, float(prediction), float(loss), cum,
                                  float(comparator_loss), float(bound)))

    @property
    def cum_loss(self) -> float:
        return self.rows[-1].cum_loss if self.rows else 0.0

    @property
    def comparator_loss(self) -> float:
        return self.rows[-1].comparator_loss if self.rows else 0.0

    @property
    def regret(self) -> float:
        return self.cum_loss - self.comparator_loss

    @property
    def bound(self) -> float:
        return self.rows[-1].bound if self.rows else 0.0

    def validate(self):
        prev_cum = 0.0
        for i, row in enumerate(self.rows):
            assert row.t == i + 1, "rows must be indexed 1..T contiguously"
            assert row.cum_loss >= prev_cum - 1e-12
            prev_cum = row.cum_loss


def loss_eval(spec: ProblemSpec, prediction, y) -> float:
    """Per-round loss of a prediction against the revealed label.

    For the logistic loss ``prediction`` is a pair (p(+1), p(-1)).
    """
    if spec.loss_kind == SQUARED:
        return float((y - prediction) ** 2)
    if spec.loss_kind == LOGISTIC:
        p_plus, p_minus = prediction
        p = p_plus if y > 0 else p_minus
        if p <= 0:
            raise DomainError("logistic probability must be positive")
        return float(-np.log(p))
    margin = spec.gamma - y * prediction
    return float(max(0.0, margin) / spec.gamma)


def squared_mixability_predict(values, log_weights, m: float) -> float:
    """Prediction of the squared-loss mixability mixture.

    ``values`` are the candidate predictions f_theta(x) and ``log_weights``
    the (unnormalised) log masses of the mixing distribution.  Returns
    (m/2) * log of the ratio of the two +-m pseudo-label partition sums,
    which guarantees (y - fhat)^2 <= -2 m^2 log E exp(-(y - f)^2 / (2 m^2))
    for every |y| <= m.
    """
    values = np.asarray(values, dtype=float)
    logw = np.asarray(log_weights, dtype=float)
    eta = 1.0 / (2.0 * m * m)
    from scipy.special import logsumexp

    num = logsumexp(logw - eta * (m - values) ** 2)
    den = logsumexp(logw - eta * (-m - values) ** 2)
    return float(0.5 * m * (num - den))


@dataclass
class ComparatorResult:
    theta: np.ndarray
    loss: float
    separable: bool
    grad_norm: float


def _newton_minimize(value, grad_hess, u0, max_iter=200, tol=1e-10):
    """Damped Newton on a smooth convex objective in span coordinates.

    Backtracking is on the objective value: saturated logistic likelihoods
    have near-flat plateaus where gradient-norm line searches stall.
    """
    u = u0.copy()
    gnorm = np.inf
    val = value(u)
    for _ in range(max_iter):
        g, h = grad_hess(u)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            break
        try:
            step = np.linalg.solve(h + 1e-14 * np.eye(len(u)), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(h, g, rcond=None)[0]
        scale, improved = 1.0, False
        for _ in range(70):
            cand = u - scale * step
            v_new = value(cand)
            if v_new < val - 1e-14 * abs(val):
                u, val, improved = cand, v_new, True
                break
            scale *= 0.5
        if not improved:
            break
    return u, gnorm


def solve_comparator(sequence, spec: ProblemSpec, ridge: float = 0.0) -> ComparatorResult:
    """Minimise the cumulative loss plus ridge penalty over the covariate span.

    Squared and logistic losses use damped Newton iterations (gradient norm
    <= 1e-10 or 200 iterations).  On separable logistic data the optimum is at
    infinity; the capped iterate is returned with ``separable`` set, and its
    loss is a valid upper proxy for the infimum.  The hinge objective has no
    curvature, so it is minimised exactly as a linear program instead.
    """
    if not sequence:
        raise DomainError("comparator needs a nonempty sequence")
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence], dtype=float)
    V = span_basis(X)
    Z = X @ V  # T x r coordinates in the span

    if spec.loss_kind == HINGE:
        return _hinge_comparator(X, y, V, Z, spec, ridge)

    if spec.loss_kind == SQUARED:
        def grad_hess(u):
            resid = Z @ u - y
            g = 2.0 * Z.T @ resid + 2.0 * ridge * u
            h = 2.0 * Z.T @ Z + 2.0 * ridge * np.eye(Z.shape[1])
            return g, h

        def total_loss(u):
            return float(np.sum((y - Z @ u) ** 2))

        objective = lambda u: total_loss(u) + ridge * float(u @ u)
        separable_check = lambda u: False
    else:
        require_classification(sequence)

        def grad_hess(u):
            z = y * (Z @ u)
            s = sigmoid(-z)  # derivative weight of -log sigma
            g = -Z.T @ (y * s) + 2.0 * ridge * u
            w = s * (1.0 - s)
            h = Z.T @ (Z * w[:, None]) + 2.0 * ridge * np.eye(Z.shape[1])
            return g, h

        def total_loss(u):
            return float(-np.sum(log_sigmoid(y * (Z @ u))))

        def objective(u):
            return total_loss(u) + ridge * float(u @ u)

        def separable_check(u):
            return bool(np.all(y * (Z @ u) > 0))

    u0 = np.zeros(Z.shape[1])
    u, gnorm = _newton_minimize(objective, grad_hess, u0)
    separable = spec.loss_kind == LOGISTIC and separable_check(u)
    if gnorm > 1e-6 and ridge == 0.0 and not separable:
        raise NonConvergence(f"gradient norm {gnorm:.3e} at iteration cap")
    theta = V @ u
    return ComparatorResult(theta, total_loss(u) + ridge * float(u @ u), separable, gnorm)


def _hinge_comparator(X, y, V, Z, spec, ridge):
    """Exact hinge-loss comparator via the standard slack-variable LP."""
    require_classification([LabeledExample(x, yy) for x, yy in zip(X, y)])
    if ridge != 0.0:
        raise DomainError("hinge comparator is solved as an LP; ridge must be 0")
    T, r = Z.shape
    gamma = spec.gamma
    # variables: u (free, r) then xi (T); minimise sum xi / gamma
    c = np.concatenate([np.zeros(r), np.ones(T) / gamma])
    # xi_t >= gamma - y_t <z_t, u>  ->  -y_t z_t . u - xi_t <= -gamma
    A_ub = np.hstack([-(y[:, None] * Z), -np.eye(T)])
    b_ub = -gamma * np.ones(T)
    bounds = [(None, None)] * r + [(0, None)] * T
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if not res.success:
        raise NonConvergence(f"hinge comparator LP failed: {res.message}")
    u = res.x[:r]
    loss = float(res.fun)
    separable = loss <= 1e-9
    return ComparatorResult(V @ u, loss, separable, 0.0)
