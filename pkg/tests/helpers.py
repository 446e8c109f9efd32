"""Shared fixtures: a 6-node/3-switch grid and an independent grid-search oracle."""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from gridreconf.grid import GridModel, Line
from gridreconf.scenarios import Dataset, generator_bounds

DG_NODE = 5
DG_NAMEPLATE = 0.12


def six_node_grid() -> GridModel:
    """PCC 0; fixed 0-1, 1-2, 0-3; switches 2-4, 3-4, 4-5 so that L = 2."""
    lines = [
        Line(1, 0, 1, 0.010, 0.008),
        Line(2, 1, 2, 0.015, 0.010),
        Line(3, 0, 3, 0.012, 0.009),
        Line(4, 2, 4, 0.020, 0.015, True),
        Line(5, 3, 4, 0.018, 0.012, True),
        Line(6, 4, 5, 0.010, 0.007, True),
    ]
    return GridModel(
        "six", 6, tuple(lines), v_lo=0.95**2, v_hi=1.05**2, base_kva=1000.0,
        nominal_p=(0.0, 0.05, 0.04, 0.06, 0.03, 0.05), nominal_q=(0.0, 0.03, 0.02, 0.03, 0.02, 0.03),
        default_y=(1, 0, 1),
    )


def six_node_dataset(count: int, seed: int, grid: GridModel | None = None) -> Dataset:
    """Loads on a 0.01 lattice so flows can hit zero exactly; one PV unit at node 5."""
    grid = grid or six_node_grid()
    rng = np.random.default_rng(seed)
    n = grid.node_count
    scale = rng.uniform(0.3, 1.7, size=(count, n))
    p = np.round(np.array(grid.nominal_p) * scale, 2)
    q = np.round(np.array(grid.nominal_q) * scale, 2)
    nameplate = np.zeros(n)
    nameplate[DG_NODE] = DG_NAMEPLATE
    avail = np.zeros((count, n))
    avail[:, DG_NODE] = np.round(rng.uniform(0.0, 1.0, size=count) * DG_NAMEPLATE, 2)
    bounds = generator_bounds(grid, nameplate, avail)
    return Dataset(grid, np.arange(count), p, q, *bounds, np.array([DG_NODE]), nameplate)


def _tree(grid, closed):
    adj = {j: [] for j in range(grid.node_count)}
    for k in closed:
        ln = grid.lines[k]
        adj[ln.from_node].append((ln.to_node, k))
        adj[ln.to_node].append((ln.from_node, k))
    parent = {0: (None, None)}
    order = [0]
    queue = deque([0])
    while queue:
        a = queue.popleft()
        for b, k in adj[a]:
            if b not in parent:
                parent[b] = (a, k)
                order.append(b)
                queue.append(b)
    return parent, order


def _lattice(lo, hi, step):
    """Multiples of ``step`` inside [lo, hi] plus both end points."""
    inner = np.arange(np.ceil(lo / step), np.floor(hi / step) + 1) * step
    return np.unique(np.concatenate([[lo], inner[(inner >= lo) & (inner <= hi)], [hi]]))


def grid_search_oracle(grid: GridModel, scen, step: float = 0.01, tol: float = 1e-9):
    """Exhaustive search over radial topologies and a lattice of DG set points.

    Uses its own tree walk and voltage recursion; nothing from the library's
    solver. Returns ``(objective, closed switch ids)`` or ``(inf, None)``.
    """
    sw = [k for k, ln in enumerate(grid.lines) if ln.is_switch]
    fixed = [k for k, ln in enumerate(grid.lines) if not ln.is_switch]
    n = grid.node_count
    L = (n - 1) - len(fixed)
    pmax = scen.p_gen_max[DG_NODE]
    qmax = scen.q_gen_max[DG_NODE]
    p_grid = _lattice(0.0, pmax, step)
    q_grid = _lattice(-qmax, qmax, step)
    best = (np.inf, None)
    for combo in itertools.combinations(sw, L):
        closed = fixed + list(combo)
        parent, order = _tree(grid, closed)
        if len(order) != n:
            continue
        for pg in p_grid:
            for qg in q_grid:
                net_p = np.array(scen.p_load, dtype=float)
                net_q = np.array(scen.q_load, dtype=float)
                net_p[DG_NODE] -= pg
                net_q[DG_NODE] -= qg
                # subtree demand flows on each node's parent line, parent -> child positive
                fp = net_p.copy()
                fq = net_q.copy()
                for j in reversed(order[1:]):
                    a, _ = parent[j]
                    fp[a] += fp[j]
                    fq[a] += fq[j]
                ok = True
                obj = 0.0
                v = np.ones(n)
                for j in order[1:]:
                    a, k = parent[j]
                    P, Q = fp[j], fq[j]
                    if (P > tol and Q < -tol) or (P < -tol and Q > tol) or max(abs(P), abs(Q)) > 10.0:
                        ok = False
                        break
                    ln = grid.lines[k]
                    obj += ln.r * (P * P + Q * Q)
                    v[j] = v[a] - 2.0 * (ln.r * P + ln.x * Q)
                    if not grid.v_lo - 1e-12 <= v[j] <= grid.v_hi + 1e-12:
                        ok = False
                        break
                if not ok:
                    continue
                # PCC slack limits
                if not (scen.p_gen_min[0] <= fp[0] <= scen.p_gen_max[0]
                        and scen.q_gen_min[0] <= fq[0] <= scen.q_gen_max[0]):
                    continue
                if obj < best[0]:
                    best = (obj, tuple(grid.lines[k].id for k in combo))
    return best


def gradient_check(pred, data, labels=None, h: float = 1e-5, rows=None, max_coords: int | None = None, seed: int = 0):
    """Central differences on every (or a sample of) network parameter.

    Coordinates whose perturbation flips the pipeline's activation pattern
    are skipped, and the relative error is measured against at least the
    rounding floor of the difference quotient. Returns ``(max relative error, checked count, skipped count)``.
    """
    rows = np.arange(len(data)) if rows is None else np.asarray(rows)
    bounds = tuple(b[rows] for b in (data.p_gen_min, data.p_gen_max, data.q_gen_min, data.q_gen_max))
    lab = None
    if labels is not None:
        from gridreconf.model import _LabelView

        lab = _LabelView(labels, rows)
    args = (data.x[rows], data.p_load[rows], data.q_load[rows], bounds, lab)

    def run():
        return pred.batch_loss_and_grads(*args, update_stats=False, with_pattern=True)

    loss0, grads, key = run()
    # below this a difference quotient is mostly cancellation noise
    floor = 1e-6 * max(abs(loss0), 1.0)
    rng = np.random.default_rng(seed)
    coords = [(name, idx) for name, arr in pred.mlp.params.items() for idx in np.ndindex(arr.shape)]
    if max_coords is not None and len(coords) > max_coords:
        coords = [coords[i] for i in rng.choice(len(coords), max_coords, replace=False)]
    worst, checked, skipped = 0.0, 0, 0
    for name, idx in coords:
        arr = pred.mlp.params[name]
        old = arr[idx]
        arr[idx] = old + h
        up, _, k_up = run()
        arr[idx] = old - h
        down, _, k_down = run()
        arr[idx] = old
        if k_up != key or k_down != key:
            skipped += 1
            continue
        num = (up - down) / (2 * h)
        ana = grads[name][idx]
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), floor))
        checked += 1
    return worst, checked, skipped
