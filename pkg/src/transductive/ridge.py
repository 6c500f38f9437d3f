"""Squared-loss predictors and identities: the exact shrinkage identity, the
forward-looking (VAW) predictor, clipped ridge, and the transductive
fixed-design predictor.

All runs operate in the covariate span, so rank-deficient regularisers with
pseudo-inverse semantics are handled uniformly; the dimension entering the
bounds is the span rank.
"""

from __future__ import annotations

import numpy as np

from .core import (RegretTrace, clip, span_basis)
from .errors import DesignMismatch, IdentityViolation
from .gauss import LeverageState


class RidgeState:
    """Sequential ridge solution theta_hat with its leverage bookkeeping."""

    def __init__(self, A: np.ndarray):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.leverage = LeverageState(self.A)
        self.xy_accum = np.zeros(self.A.shape[0])
        self.theta_hat = np.zeros(self.A.shape[0])

    def predict_vaw(self, x: np.ndarray) -> float:
        """(1 - h_x) <x, theta_hat> where h_x counts x in its own leverage."""
        h = self.leverage.peek_leverage(x)
        return float((1.0 - h) * (x @ self.theta_hat))

    def predict_plain(self, x: np.ndarray) -> float:
        return float(x @ self.theta_hat)

    def update(self, x: np.ndarray, y: float) -> float:
        """Observe (x, y); returns the leverage of x.  theta_hat refreshes to
        the post-update ridge solution (Sum xx^T + A)^-1 Sum yx."""
        h = self.leverage.leverage_update(x)
        self.xy_accum = self.xy_accum + y * x
        self.theta_hat = self.leverage.inverse @ self.xy_accum
        return h


def vaw_predict(state: RidgeState, x: np.ndarray) -> float:
    return state.predict_vaw(x)


def _ridge_infimum(X, y, A) -> float:
    """inf_theta sum (y - <x, theta>)^2 + theta^T A theta, exactly."""
    if len(y) == 0:
        return 0.0
    M = X.T @ X + A
    b = X.T @ y
    theta = np.linalg.lstsq(M, b, rcond=None)[0]
    return float(np.sum((y - X @ theta) ** 2) + theta @ A @ theta)


def _unregularized_infimum(X, y) -> float:
    if len(y) == 0:
        return 0.0
    theta, *_ = np.linalg.lstsq(X, y, rcond=None)
    return float(np.sum((y - X @ theta) ** 2))


def _logdet_ratio(X, A) -> float:
    """log det(sum xx^T + A) - log det(A) on the working span."""
    M = X.T @ X + A
    return float(np.linalg.slogdet(M)[1] - np.linalg.slogdet(A)[1])


def run_vaw(sequence, lam: float, m: float) -> RegretTrace:
    """Forward-looking ridge with A = lam I; the trace's bound column is the
    regularised comparator plus m^2 log det(I + Gram/lam) on each prefix."""
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    V = span_basis(X)
    Z = X @ V
    r = Z.shape[1]
    state = RidgeState(lam * np.eye(r))
    trace = RegretTrace(meta={"kind": "vaw", "lambda": lam, "m": m})
    for t in range(len(sequence)):
        z = Z[t]
        pred = state.predict_vaw(z)
        loss = (y[t] - pred) ** 2
        state.update(z, y[t])
        comp = _ridge_infimum(Z[:t + 1], y[:t + 1], lam * np.eye(r))
        bound = comp + m**2 * _logdet_ratio(Z[:t + 1], lam * np.eye(r))
        trace.append(pred, loss, comp, bound)
    return trace


def run_clipped_ridge(sequence, lam: float, m: float) -> RegretTrace:
    """Plain ridge predictions clipped to [-m, m]; Cor-style bound with the
    factor-4 log-determinant term."""
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    V = span_basis(X)
    Z = X @ V
    r = Z.shape[1]
    state = RidgeState(lam * np.eye(r))
    trace = RegretTrace(meta={"kind": "clipped-ridge", "lambda": lam, "m": m})
    for t in range(len(sequence)):
        z = Z[t]
        pred = clip(state.predict_plain(z), m)
        loss = (y[t] - pred) ** 2
        state.update(z, y[t])
        comp = _ridge_infimum(Z[:t + 1], y[:t + 1], lam * np.eye(r))
        bound = comp + 4.0 * m**2 * _logdet_ratio(Z[:t + 1], lam * np.eye(r))
        trace.append(pred, loss, comp, bound)
    return trace


def run_transductive_ridge(design, sequence, lam: float, m: float) -> RegretTrace:
    """Fixed-design predictor: the shrinkage identity with A = lam * design
    Gram.  Equals the per-round argmin with the extra (<x, theta>)^2 term and
    the design-wide penalty."""
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    used = set()
    for ex in sequence:
        used.add(design.index_of(ex.x, used))
    if len(used) != design.size or design.size != len(sequence):
        raise DesignMismatch("sequence does not exhaust the design set")
    V = design.span_basis
    Z = X @ V
    r = Z.shape[1]
    A = lam * (V.T @ design.gram @ V)
    state = RidgeState(A)
    T = design.size
    trace = RegretTrace(meta={"kind": "transductive-ridge", "lambda": lam,
                              "m": m, "rank": r})
    bound_slack = lam * m**2 * T + r * m**2 * np.log1p(1.0 / lam)
    for t in range(len(sequence)):
        z = Z[t]
        pred = state.predict_vaw(z)
        loss = (y[t] - pred) ** 2
        state.update(z, y[t])
        comp = _unregularized_infimum(Z[:t + 1], y[:t + 1])
        trace.append(pred, loss, comp, comp + bound_slack)
    return trace


def verify_identity(sequence, A: np.ndarray):
    """Both sides of the shrinkage identity, computed independently.

    LHS accumulates (1 - h_t)(y_t - <x_t, theta_hat_t>)^2 sequentially; RHS is
    the closed-form regularised infimum.  Raises IdentityViolation beyond
    1e-8 relative tolerance (that signals an implementation bug, not data).
    """
    if not sequence:
        return 0.0, 0.0
    X = np.array([ex.x for ex in sequence])
    y = np.array([ex.y for ex in sequence])
    A = np.atleast_2d(np.asarray(A, dtype=float))
    V = span_basis(X)
    Z = X @ V
    A_span = V.T @ A @ V
    state = RidgeState(A_span)
    lhs = 0.0
    for t in range(len(sequence)):
        z = Z[t]
        resid = y[t] - state.predict_plain(z)
        h = state.update(z, y[t])
        lhs += (1.0 - h) * resid**2
    rhs = _ridge_infimum(Z, y, A_span)
    if abs(lhs - rhs) > 1e-8 * (1.0 + abs(rhs)):
        raise IdentityViolation(f"|lhs - rhs| = {abs(lhs - rhs):.3e}")
    return float(lhs), float(rhs)
