"""Dual active-set solver for small dense strictly convex QPs.

Solves ``min 1/2 x'Hx + c'x  s.t.  Gx <= h`` following Goldfarb and Idnani:
start from the unconstrained minimiser and add the most violated
constraint at each outer step, dropping constraints whose multiplier would
turn negative. The products ``H^-1 G'`` and ``G H^-1 G'`` are formed once per call since the
problems this package produces have a few dozen variables at most.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray
    active: tuple[int, ...]
    status: str
    iterations: int
    kkt_residual: float

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def kkt_residual(H, c, G, h, x, lam) -> float:
    """Max of stationarity, primal infeasibility, dual infeasibility and complementarity."""
    stat = H @ x + c + G.T @ lam if len(lam) else H @ x + c
    slack = G @ x - h if len(h) else np.zeros(0)
    parts = [np.abs(stat).max(initial=0.0)]
    if len(h):
        parts += [
            np.maximum(slack, 0.0).max(initial=0.0),
            np.maximum(-lam, 0.0).max(initial=0.0),
            np.abs(lam * slack).max(initial=0.0),
        ]
    return float(max(parts))


def _warm_start(ghg, hg, G, h, x0, rows, n):
    if not rows or len(rows) > n:
        return None
    try:
        minv = np.linalg.inv(ghg[np.ix_(rows, rows)])
    except np.linalg.LinAlgError:
        return None
    lam = minv @ (G[rows] @ x0 - h[rows])
    if not np.all(np.isfinite(lam)) or np.any(lam < 0.0):
        return None
    return x0 - hg[:, rows] @ lam, rows, lam, minv


def solve_qp(H, c, G=None, h=None, *, tol=1e-11, max_iter=100_000, h_inv=None, warm=None) -> QPResult:
    """Minimise over ``Gx <= h``. ``h_inv`` may pass a precomputed inverse of ``H``.

    ``warm`` lists rows expected to be active. If the equality-constrained
    minimiser on those rows has non-negative multipliers it is a valid dual
    starting point; otherwise the solve starts from scratch.
    """
    H = np.asarray(H, dtype=float)
    c = np.asarray(c, dtype=float)
    n = len(c)
    G = np.zeros((0, n)) if G is None else np.asarray(G, dtype=float).reshape(-1, n)
    h = np.zeros(0) if h is None else np.asarray(h, dtype=float)
    m = len(h)

    if h_inv is None:
        l_inv = np.linalg.inv(np.linalg.cholesky(H))
        h_inv = l_inv.T @ l_inv

    x = -h_inv @ c
    # every step only needs H^-1 applied to constraint normals, so do it once
    hg = h_inv @ G.T
    ghg = G @ hg
    active: list[int] = []
    u = np.zeros(0)
    # inverse of G_A H^-1 G_A' for the active rows, updated as rows enter and leave
    minv = np.zeros((0, 0))

    if warm is not None and m:
        start = _warm_start(ghg, hg, G, h, x, list(warm), n)
        if start is not None:
            x, active, u, minv = start

    def drop(k):
        nonlocal minv, u
        keep = np.arange(len(active)) != k
        col = minv[keep, k]
        minv = minv[np.ix_(keep, keep)] - np.outer(col, col) / minv[k, k]
        del active[k]
        u = u[keep]
    feas_tol = tol * (1.0 + np.abs(h)) if m else np.zeros(0)
    it = 0

    def result(status):
        lam = np.zeros(m)
        if active:
            lam[active] = u
        return QPResult(x, lam, tuple(active), status, it, kkt_residual(H, c, G, h, x, lam))

    while True:
        if m == 0:
            return result("optimal")
        viol = G @ x - h - feas_tol
        if active:
            viol[active] = -np.inf
        p = int(np.argmax(viol))
        if viol[p] <= 0:
            return result("optimal")
        n_p = -G[p]
        hn_p = -hg[:, p]
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                return result("max_iter")
            s_p = -(G[p] @ x - h[p])
            if active:
                r = minv @ ghg[active, p]
                z = hn_p + hg[:, active] @ r
            else:
                r = np.zeros(0)
                z = hn_p
            zn = float(z @ n_p)
            # n_p in the span of the active normals leaves no primal direction
            dependent = len(active) >= n or np.linalg.norm(z) <= 1e-9 * np.linalg.norm(hn_p)
            full_step = np.inf if dependent or zn <= 0 else -s_p / zn
            pos = np.flatnonzero(r > 1e-14)
            if len(pos):
                ratios = u[pos] / r[pos]
                j = int(np.argmin(ratios))
                partial_step, k = float(ratios[j]), int(pos[j])
            else:
                partial_step, k = np.inf, -1
            if not np.isfinite(full_step) and not np.isfinite(partial_step):
                return result("infeasible")
            if not np.isfinite(full_step):
                u = u - partial_step * r
                u_p += partial_step
                drop(k)
                continue
            t = min(full_step, partial_step)
            x = x + t * z
            u = u - t * r
            u_p += t
            if t == full_step:
                b = r / zn
                grown = np.empty((len(active) + 1,) * 2)
                grown[:-1, :-1] = minv + np.outer(b, r)
                grown[:-1, -1] = grown[-1, :-1] = -b
                grown[-1, -1] = 1.0 / zn
                minv = grown
                active.append(p)
                u = np.append(u, u_p)
                break
            drop(k)
