"""Physics-informed rounding of switch probabilities and output activations.

``phyr_round`` sorts the predicted probabilities and uses the radiality
cutoff ``L`` to force all but (at most) two of them to hard binaries. The
two entries straddling the cutoff keep their fractional value in training
so that gradient information survives the rounding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BadBounds, BadCutoff

INSI_TAU = 5.0
INSI_MU = 1.0


@dataclass(frozen=True)
class RoundingPlan:
    """Partition of switch positions produced by one rounding call.

    Arrays carry the same leading batch shape as the rounded input.
    ``order[..., r]`` is the position holding rank ``r`` (descending).
    """

    L: int
    mode: str
    order: np.ndarray
    forced_one: np.ndarray
    forced_zero: np.ndarray
    free: np.ndarray

    def indices(self, which: str) -> np.ndarray:
        """Positions in a set for an unbatched plan."""
        mask = getattr(self, which)
        if mask.ndim != 1:
            raise ValueError("indices() is only defined for a single vector")
        return np.flatnonzero(mask)


def phyr_round(p, L: int, mode: str = "inference"):
    """Round the last axis of ``p`` under cutoff ``L``.

    Returns ``(z, plan)``. Ties in the descending sort go to the lower index.
    """
    p = np.asarray(p, dtype=float)
    m = p.shape[-1]
    if not 0 <= L <= m:
        raise BadCutoff(f"cutoff L={L} outside [0, {m}]")
    if mode not in ("train", "inference"):
        raise ValueError("mode must be 'train' or 'inference'")
    order = np.argsort(-p, axis=-1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(m), order.shape), axis=-1)
    if mode == "inference" or L in (0, m):
        n_one, n_free = L, 0
    else:
        n_one, n_free = L - 1, 2
    forced_one = ranks < n_one
    free = (ranks >= n_one) & (ranks < n_one + n_free)
    forced_zero = ranks >= n_one + n_free
    z = np.where(forced_one, 1.0, np.where(free, p, 0.0))
    return z, RoundingPlan(L, mode, order, forced_one, forced_zero, free)


def phyr_backward(grad, plan: RoundingPlan) -> np.ndarray:
    """Gradient through rounding: identity on free entries, zero on forced ones."""
    return np.where(plan.free, grad, 0.0)


def _insi_raw(u, tau, mu):
    e = np.exp(np.minimum(-tau * np.asarray(u, dtype=float), 700.0))
    return 2.0 * (1.0 + mu) / (mu + e) - 1.0, e


def insi(u, tau: float = INSI_TAU, mu: float = INSI_MU):
    """Step-function relaxation ``[2(1+mu)/(mu+exp(-tau u)) - 1]`` clipped to [0, 1]."""
    if tau <= 0 or mu <= 0:
        raise ValueError("tau and mu must be positive")
    raw, _ = _insi_raw(u, tau, mu)
    return np.clip(raw, 0.0, 1.0)


def insi_active(u, tau: float = INSI_TAU, mu: float = INSI_MU) -> np.ndarray:
    """True where InSi is strictly between its clip levels (non-zero slope)."""
    raw, _ = _insi_raw(u, tau, mu)
    return (raw > 0.0) & (raw < 1.0)


def insi_grad(u, tau: float = INSI_TAU, mu: float = INSI_MU) -> np.ndarray:
    raw, e = _insi_raw(u, tau, mu)
    slope = 2.0 * (1.0 + mu) * tau * e / (mu + e) ** 2
    return np.where((raw > 0.0) & (raw < 1.0), slope, 0.0)


def _check_box(lo, hi):
    if np.any(np.asarray(lo) >= np.asarray(hi)):
        raise BadBounds("box scaling needs lo < hi everywhere")


def scale_to_box_with_grad(raw, lo, hi):
    """Value and derivative of :func:`scale_to_box` from a single sigmoid evaluation."""
    _check_box(lo, hi)
    raw = np.asarray(raw, dtype=float)
    width = np.asarray(hi, dtype=float) - np.asarray(lo, dtype=float)
    # sigma(-|raw|) is the distance to the nearer bound, which keeps tail resolution
    e = expit(-np.abs(raw))
    val = np.where(raw < 0, lo + e * width, hi - e * width)
    return val, e * (1.0 - e) * width


def scale_to_box(raw, lo, hi):
    """Sigmoid map of ``raw`` onto the open box (lo, hi)."""
    return scale_to_box_with_grad(raw, lo, hi)[0]


def scale_to_box_grad(raw, lo, hi):
    return scale_to_box_with_grad(raw, lo, hi)[1]
