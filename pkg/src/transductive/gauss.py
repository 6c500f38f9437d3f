"""Exact Gaussian/quadratic machinery: Laplace formula, mix-loss identity,
sequential leverage scores, and exact sampling.

All densities are carried in log space.  Conventions: a GaussianMeasure with
precision P and mean mu has density proportional to
exp(-(theta-mu)^T P (theta-mu)), i.e. covariance (2P)^{-1}; this matches the
prior normalisation sqrt(det(P/pi)) used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CholeskyFailure, SingularPotential

_SYM_TOL = 1e-12
_REFACTOR_EVERY = 64


@dataclass(frozen=True)
class QuadraticPotential:
    """Q(theta) = theta^T A theta + b^T theta + c with A symmetric PSD."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        scale = 1.0 + np.max(np.abs(A))
        if np.max(np.abs(A - A.T)) > _SYM_TOL * scale:
            raise SingularPotential("A must be symmetric")
        if np.min(np.linalg.eigvalsh(A)) < -1e-10 * scale:
            raise SingularPotential("A must be positive semi-definite")

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.A @ theta + self.b @ theta + self.c)


def laplace_integral(q: QuadraticPotential) -> float:
    """log of the exact Gaussian integral of exp(-Q) over R^d.

    Equals -inf Q + (d/2) log pi - (1/2) log det A; requires A strictly
    positive definite.
    """
    eigvals = np.linalg.eigvalsh(q.A)
    if np.min(eigvals) <= 1e-12:
        raise SingularPotential(
            f"A has an eigenvalue {np.min(eigvals):.3e} <= 1e-12")
    theta_star = np.linalg.solve(2.0 * q.A, -q.b)
    inf_q = q(theta_star)
    d = q.dim
    return float(-inf_q + 0.5 * d * np.log(np.pi) - 0.5 * np.sum(np.log(eigvals)))


def gaussian_mix_loss(nu: float, sigma2: float, y: float) -> float:
    """-log E exp(-(y - Z)^2) for Z ~ N(nu, sigma2), in closed form."""
    if sigma2 < 0:
        raise SingularPotential("variance must be nonnegative")
    return float((nu - y) ** 2 / (2.0 * sigma2 + 1.0)
                 + 0.5 * np.log(2.0 * sigma2 + 1.0))


@dataclass
class GaussianMeasure:
    """Gaussian with density proportional to exp(-(x-mean)^T P (x-mean))."""

    precision: np.ndarray
    mean: np.ndarray
    log_normalizer: float = field(init=False)

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        self.precision = P
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise CholeskyFailure("precision is not positive definite") from exc
        d = P.shape[0]
        # normaliser of exp(-(x-m)^T P (x-m)): integral is pi^{d/2}/sqrt(det P)
        self.log_normalizer = float(0.5 * d * np.log(np.pi)
                                    - np.sum(np.log(np.diag(L))))

    @property
    def dim(self) -> int:
        return self.precision.shape[0]

    def log_density(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        diff = theta - self.mean
        return float(-diff @ self.precision @ diff - self.log_normalizer)


def sample_gaussian(measure: GaussianMeasure, n: int, seed) -> np.ndarray:
    """Draw n exact samples; density matches exp(-(x-mean)^T P (x-mean))."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d = measure.dim
    if n == 0:
        return np.zeros((0, d))
    try:
        L = np.linalg.cholesky(2.0 * measure.precision)
    except np.linalg.LinAlgError as exc:
        raise CholeskyFailure("precision is not positive definite") from exc
    z = rng.standard_normal((n, d))
    # cov = (L L^T)^{-1} = (2P)^{-1}
    return measure.mean + np.linalg.solve(L.T, z.T).T


class LeverageState:
    """Incrementally maintained inverse and log-determinant of sum x x^T + A.

    Rank-one Sherman-Morrison updates with periodic refactorisation (every
    64 updates) to bound numerical drift.
    """

    def __init__(self, A: np.ndarray):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        sign_det, logdet = np.linalg.slogdet(A)
        if sign_det <= 0:
            raise SingularPotential("regulariser A must be positive definite")
        self._A = A.copy()
        self._M = A.copy()
        self.inverse = np.linalg.inv(A)
        self.log_det = float(logdet)
        self._updates = 0

    @property
    def dim(self) -> int:
        return self._A.shape[0]

    def leverage_update(self, x: np.ndarray):
        """Add x x^T; return the leverage h = x^T (M + x x^T)^{-1} x in [0, 1].

        The determinant-ratio identity det(M)/det(M + x x^T) = 1 - h drives
        the log_det update.
        """
        x = np.asarray(x, dtype=float)
        iv_x = self.inverse @ x
        g = float(x @ iv_x)  # x^T M^{-1} x >= 0
        h = g / (1.0 + g)
        self._M = self._M + np.outer(x, x)
        self.inverse = self.inverse - np.outer(iv_x, iv_x) / (1.0 + g)
        self.log_det += float(np.log1p(g))
        self._updates += 1
        if self._updates % _REFACTOR_EVERY == 0:
            self.inverse = np.linalg.inv(self._M)
            self.log_det = float(np.linalg.slogdet(self._M)[1])
        return h

    def peek_leverage(self, x: np.ndarray) -> float:
        """Leverage of x if it were added now, without mutating the state."""
        x = np.asarray(x, dtype=float)
        g = float(x @ self.inverse @ x)
        return g / (1.0 + g)

    @property
    def matrix(self) -> np.ndarray:
        return self._M


def leverage_update(state: LeverageState, x: np.ndarray):
    """Functional wrapper: returns (h, state) with the state updated in place."""
    h = state.leverage_update(x)
    return h, state
