"""Deterministic tensor quadrature on composite Gauss-Legendre panels.

The integrands in this library are products of a (possibly degenerate)
Gaussian factor and smooth unimodal prior factors, so per-axis node sets are
built from the union of the posterior's local scales and the prior's tail
quantiles, with geometrically widening panels.  Everything is evaluated in
log space and reduced with log-sum-exp.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

_GEOM = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0,
         512.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0)


def panel_rule(breakpoints, order: int):
    """Composite Gauss-Legendre rule over consecutive breakpoints."""
    pts, wts = np.polynomial.legendre.leggauss(order)
    bp = np.asarray(breakpoints, dtype=float)
    nodes = []
    weights = []
    for a, b in zip(bp[:-1], bp[1:]):
        if b <= a:
            continue
        half = 0.5 * (b - a)
        nodes.append(0.5 * (a + b) + half * pts)
        weights.append(half * wts)
    return np.concatenate(nodes), np.concatenate(weights)


def axis_breakpoints(centers, inner_scales, outer: float, extra=()):
    """Geometric ladders around each center out to +-outer, plus extras.

    ``centers`` and ``inner_scales`` are matched sequences; each center
    contributes breakpoints center +- scale * (0, .5, 1, 2, 4, ...) capped at
    the outer range.  The returned array is sorted and deduplicated.
    """
    pts = set()
    lo, hi = -float(outer), float(outer)
    for c, s in zip(centers, inner_scales):
        if not np.isfinite(c):
            continue
        s = min(max(float(s), 1e-300), outer)
        for g in _GEOM:
            for p in (c + g * s, c - g * s):
                if lo <= p <= hi:
                    pts.add(float(p))
            if g * s > 2.0 * outer:
                break
    pts.add(lo)
    pts.add(hi)
    for e in extra:
        if lo <= e <= hi:
            pts.add(float(e))
    bp = np.array(sorted(pts))
    # collapse near-duplicate breakpoints (they create zero-width panels)
    keep = np.concatenate([[True], np.diff(bp) > 1e-14 * (1.0 + np.abs(bp[1:]))])
    return bp[keep]


def tensor_grid(axes):
    """Cartesian product of per-axis (nodes, weights) into (points, logw)."""
    node_list = [a[0] for a in axes]
    logw_list = [np.log(a[1]) for a in axes]
    mesh = np.meshgrid(*node_list, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=-1)
    logw = np.zeros(points.shape[0])
    shape = [len(n) for n in node_list]
    for k, lw in enumerate(logw_list):
        reshape = [1] * len(shape)
        reshape[k] = shape[k]
        logw += np.broadcast_to(lw.reshape(reshape), shape).ravel()
    return points, logw


def log_integrate(log_f, axes) -> float:
    """log of the integral of exp(log_f) over the tensor-product rule."""
    points, logw = tensor_grid(axes)
    vals = log_f(points)
    return float(logsumexp(vals + logw))


def gauss_hermite_axes(mode, transform, half_range: float, order: int,
                       panels_per_side: int):
    """Whitened composite panels: theta = mode + transform @ v, v on panels.

    Returns per-axis (nodes, weights) in v coordinates together with the log
    Jacobian |det transform|; callers evaluate log_f(mode + v @ transform.T)
    and add the Jacobian once.
    """
    d = len(mode)
    ratio = (half_range / 0.5) ** (1.0 / max(panels_per_side - 1, 1))
    edges = [0.0]
    e = 0.5
    for _ in range(panels_per_side):
        edges.append(min(e, half_range))
        e *= ratio
    edges = np.array(sorted(set([-x for x in edges] + edges)))
    nodes, weights = panel_rule(edges, order=order)
    axes = [(nodes, weights)] * d
    sign, logdet = np.linalg.slogdet(transform)
    return axes, float(logdet)
