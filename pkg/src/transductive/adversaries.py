"""Lower-bound constructions: the hard sequences for the forward-looking
ridge predictor and the interactive binary-search adversary for the clipped
linear class.

Covariates like 10^(2^T) are far beyond float range, so they are carried as
exponents; the constructions only ever compare magnitudes and evaluate
bounded quantities (labels, predictions, clipped products), which is done in
exponent/log-domain arithmetic.  The geometric 2^t T sequence is evaluated
through 4^{-t}-scaled running sums, which stay O(T^2) for every horizon.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DomainError

_COMPARATOR_COEF = 15.0 / 16.0


@dataclass
class PowerOfTen:
    """A covariate 10^exponent, kept symbolic."""

    exponent: int

    @property
    def log10(self) -> float:
        return float(self.exponent)


@dataclass
class AdversaryReport:
    sequence: list
    algorithm_loss: float
    comparator_loss: float
    regret: float
    guaranteed_floor: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        assert abs(self.regret - (self.algorithm_loss - self.comparator_loss)) < 1e-9


def vaw_hard_sequence(T: int, lam: float) -> AdversaryReport:
    """Hard sequence for the d=1 forward-looking ridge predictor.

    Large regularisation (lam >= T): constant ones, the predictor never
    reaches 1/2, floor T/4.  Small regularisation: the geometric alternating
    sequence x_t = 2^t T, y_t = (-1)^t with per-round error at least 11/10,
    floor (11/10)^2 (T-1) - T.
    """
    if T < 2:
        raise DomainError("hard sequences need T >= 2")
    if lam >= T:
        seq = [(1.0, 1.0)] * T
        sum_xy = 0.0
        sum_xx = 0.0
        loss = 0.0
        for _ in range(T):
            pred = sum_xy / (lam + sum_xx + 1.0)
            loss += (1.0 - pred) ** 2
            sum_xy += 1.0
            sum_xx += 1.0
        floor = T / 4.0
        return AdversaryReport(seq, loss, 0.0, loss, floor,
                               meta={"case": "large-lambda", "lambda": lam})
    # scaled running sums: b_t = 4^{-t} sum_{i<=t} x_i^2, c_t = 2^{-t} sum_{i<=t} x_i y_i
    seq = [(f"2^{t}*{T}", float((-1) ** t)) for t in range(1, T + 1)]
    b = 0.0
    c = 0.0
    loss = 0.0
    for t in range(1, T + 1):
        y = float((-1) ** t)
        b = b / 4.0 + T * T          # x_t^2 scaled by 4^{-t}
        pred = (T * c / 2.0) / (lam * 4.0 ** (-t) + b)  # x_t * theta_hat_t
        loss += (y - pred) ** 2
        c = c / 2.0 + y * T          # x_t y_t scaled by 2^{-t}
    comparator = T - c * c / b       # exact least-squares optimum
    floor = 1.21 * (T - 1) - T
    return AdversaryReport(seq, loss, comparator, loss - comparator, floor,
                           meta={"case": "small-lambda", "lambda": lam})


# --------------------------------------------------------------------------
# interactive adversary for the clipped linear class
# --------------------------------------------------------------------------

def _clip_unit(v: float) -> float:
    return min(1.0, max(-1.0, v))


def _comparator_prediction(x_exp: int, theta_exp: int) -> float:
    """clip_1((15/16) 10^{x_exp - theta_exp}) via exponent arithmetic."""
    diff = x_exp - theta_exp
    if diff >= 16:
        return 1.0
    if diff <= -16:
        return _COMPARATOR_COEF * 10.0 ** diff
    return _clip_unit(_COMPARATOR_COEF * 10.0 ** diff)


def clipped_class_adversary(T: int, algorithm) -> AdversaryReport:
    """Binary-search adversary against any interactive predictor.

    Presents midpoint covariates 10^{i_t} from the shrinking index interval,
    labels 7/8 whenever the prediction is <= 1/2 (else 1/8), and compares to
    the clipped linear comparator indexed by the surviving point.  The
    measured regret is guaranteed at least T/8.  The ``algorithm`` is a black
    box with predict(PowerOfTen) -> float and update(PowerOfTen, y).
    """
    if T < 1:
        raise DomainError("T must be >= 1")
    a, b = 0, 2**T - 2
    # a label 7/8 at index i requires the comparator index <= i; a label 1/8
    # requires it >= i + 1.  The comparator exponent may leave [0, 2^T - 2]
    # (theta ranges over all reals), so the window starts one step wider.
    lo_constraint, hi_constraint = -1, 2**T - 1
    rounds = []
    alg_loss = 0.0
    for t in range(1, T + 1):
        n_t = b - a + 1
        assert n_t == 2 ** (T - t + 1) - 1, "interval invariant broken"
        i_t = (a + b) // 2
        x = PowerOfTen(i_t)
        pred = float(algorithm.predict(x))
        if pred <= 0.5:
            y = 7.0 / 8.0
            hi_constraint = min(hi_constraint, i_t)
            b = i_t - 1
        else:
            y = 1.0 / 8.0
            lo_constraint = max(lo_constraint, i_t + 1)
            a = i_t + 1
        algorithm.update(x, y)
        alg_loss += (y - pred) ** 2
        rounds.append((i_t, y, pred))
    assert lo_constraint <= hi_constraint, "comparator window emptied"
    theta_exp = lo_constraint
    candidates = {lo_constraint, hi_constraint} | {i for i, _, _ in rounds}
    comparator = min(
        sum((y - _comparator_prediction(i, c)) ** 2 for i, y, _ in rounds)
        for c in candidates)
    floor = T / 8.0
    return AdversaryReport(rounds, alg_loss, comparator, alg_loss - comparator,
                           floor, meta={"theta_index": theta_exp})


def comparator_threshold_check(i: int, j: int):
    """The (15/16) 10^{j-i} product is > 7/8 iff j >= i and < 1/8 iff j < i."""
    v = _comparator_prediction(j, i)
    if j >= i:
        return v > 7.0 / 8.0
    return v < 1.0 / 8.0


# --------------------------------------------------------------------------
# baseline interactive algorithms (d = 1, exponent covariates)
# --------------------------------------------------------------------------

class ConstantHalf:
    """Always predicts 1/2."""

    def predict(self, x):
        return 0.5

    def update(self, x, y):
        pass


class FollowTheLeaderClipped:
    """Fits the clipped-linear candidate with least cumulative loss so far.

    Candidates are 0 and the comparator-style thresholds (15/16) 10^{-k} for
    every exponent k seen, evaluated in exponent arithmetic; ties prefer 0
    and then the smallest exponent (deterministic).
    """

    def __init__(self):
        self.history = []  # (exponent, y)

    def _candidate_loss(self, cand):
        if cand is None:  # theta = 0
            return sum(y * y for _, y in self.history)
        return sum((y - _comparator_prediction(e, cand)) ** 2
                   for e, y in self.history)

    def predict(self, x):
        if not self.history:
            return 0.0
        cands = [None] + sorted({e for e, _ in self.history})
        best = min(cands, key=lambda c: (self._candidate_loss(c),
                                         -1 if c is None else c))
        if best is None:
            return 0.0
        return _comparator_prediction(x.exponent, best)

    def update(self, x, y):
        self.history.append((x.exponent, y))


class ClippedVaw:
    """The d=1 forward-looking ridge predictor, clipped to [-1, 1], with all
    sums carried as (log10 magnitude) pairs; every x and y here is positive,
    so no cancellation occurs."""

    def __init__(self, lam: float = 1.0):
        self.log_lam = math.log10(lam)
        self.log_sum_xy = -math.inf   # log10 of sum x_i y_i
        self.log_sum_xx = -math.inf   # log10 of sum x_i^2

    @staticmethod
    def _log_add(a: float, b: float) -> float:
        if a == -math.inf:
            return b
        if b == -math.inf:
            return a
        hi, lo = max(a, b), min(a, b)
        return hi + math.log10(1.0 + 10.0 ** (lo - hi))

    def predict(self, x):
        denom = self._log_add(self.log_lam, self._log_add(self.log_sum_xx,
                                                          2.0 * x.log10))
        if self.log_sum_xy == -math.inf:
            return 0.0
        # (1 - h) * x * theta_hat with h = x^2 / denom
        log_pred = x.log10 + self.log_sum_xy - denom
        h = 10.0 ** min(2.0 * x.log10 - denom, 0.0)
        pred = (1.0 - h) * 10.0 ** min(log_pred, 16.0)
        return _clip_unit(pred)

    def update(self, x, y):
        self.log_sum_xy = self._log_add(self.log_sum_xy,
                                        x.log10 + math.log10(y))
        self.log_sum_xx = self._log_add(self.log_sum_xx, 2.0 * x.log10)
