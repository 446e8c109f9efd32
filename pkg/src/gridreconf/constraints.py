"""The full reconfiguration constraint set written as ``h(psi) <= 0`` rows.

Every row is affine in the decision variables, which the completion layer
exploits to get its penalty Jacobian by probing. Row order is fixed per
grid and ``no_export`` flag, and :func:`inequality_labels` names each row.
"""
from __future__ import annotations

import numpy as np

from .grid import GridModel, PowerState, TopologyState, cutoff_L, distflow_residuals

INEQ_CLASSES = ("ohm-switch", "flow-existence", "gen-limit", "voltage", "connectivity", "no-export")
DEFAULT_BIG_M = 10.0


def pcc_inflow(grid: GridModel):
    """For each line touching the PCC: (line position, True if its ij direction enters the PCC)."""
    out = []
    for k in range(grid.n_lines):
        if grid.to_idx[k] == grid.pcc_node:
            out.append((k, True))
        elif grid.from_idx[k] == grid.pcc_node:
            out.append((k, False))
    return out


def inequality_labels(grid: GridModel, no_export: bool = False) -> list[tuple[str, str]]:
    labels: list[tuple[str, str]] = []
    ids = [ln.id for ln in grid.lines]
    for k in grid.switch_lines:
        labels.append(("ohm-switch", f"ohm_upper[{ids[k]}]"))
        labels.append(("ohm-switch", f"ohm_lower[{ids[k]}]"))
    for name in ("P_ij", "P_ji", "Q_ij", "Q_ji"):
        for kind in ("nonneg", "cap"):
            labels += [("flow-existence", f"{name}_{kind}[{i}]") for i in ids]
    for name in ("P_G_max", "P_G_min", "Q_G_max", "Q_G_min"):
        labels += [("gen-limit", f"{name}[{j}]") for j in range(grid.node_count)]
    for name in ("v_max", "v_min"):
        labels += [("voltage", f"{name}[{j}]") for j in grid.non_pcc]
    labels += [("connectivity", f"connect[{j}]") for j in range(grid.node_count)]
    if no_export:
        for k, _ in pcc_inflow(grid):
            labels += [("no-export", f"{name}_into_pcc[{ids[k]}]") for name in ("z", "P", "Q")]
    return labels


def inequality_values(grid: GridModel, topo: TopologyState, state: PowerState, bounds,
                      big_m: float = DEFAULT_BIG_M, no_export: bool = False) -> np.ndarray:
    """Evaluate every ``h`` row; positive entries are violations.

    ``bounds`` is ``(p_min, p_max, q_min, q_max)`` per node. All inputs may
    carry matching leading batch dimensions.
    """
    p_min, p_max, q_min, q_max = (np.asarray(b, dtype=float) for b in bounds)
    y = np.asarray(topo.y, dtype=float)
    z_ij = np.asarray(topo.z_ij, dtype=float)
    z_ji = np.asarray(topo.z_ji, dtype=float)
    v = np.asarray(state.v, dtype=float)
    p_ij, p_ji, q_ij, q_ji = (np.asarray(a, dtype=float) for a in (state.p_ij, state.p_ji, state.q_ij, state.q_ji))
    rows = []

    sw = grid.switch_lines
    drop = (v[..., grid.to_idx[sw]] - v[..., grid.from_idx[sw]]
            + 2.0 * (grid.r[sw] * (p_ij[..., sw] - p_ji[..., sw]) + grid.x[sw] * (q_ij[..., sw] - q_ji[..., sw])))
    slack = big_m * (1.0 - y)
    ohm = np.stack([drop - slack, -drop - slack], axis=-1)
    rows.append(ohm.reshape(ohm.shape[:-2] + (-1,)))

    for flow, z in ((p_ij, z_ij), (p_ji, z_ji), (q_ij, z_ij), (q_ji, z_ji)):
        rows.append(-flow)
        rows.append(flow - big_m * z)

    rows += [state.p_gen - p_max, p_min - state.p_gen, state.q_gen - q_max, q_min - state.q_gen]
    rows += [v[..., grid.non_pcc] - grid.v_hi, grid.v_lo - v[..., grid.non_pcc]]

    touch = np.abs(grid.incidence)
    rows.append(1.0 - (z_ij + z_ji) @ touch.T)

    if no_export:
        for k, into_via_ij in pcc_inflow(grid):
            if into_via_ij:
                rows += [z_ij[..., k:k + 1], p_ij[..., k:k + 1], q_ij[..., k:k + 1]]
            else:
                rows += [z_ji[..., k:k + 1], p_ji[..., k:k + 1], q_ji[..., k:k + 1]]

    shape = np.broadcast_shapes(*(r.shape[:-1] for r in rows))
    return np.concatenate([np.broadcast_to(r, shape + r.shape[-1:]) for r in rows], axis=-1)


def equality_residuals(grid: GridModel, topo: TopologyState, state: PowerState) -> dict[str, np.ndarray]:
    """Signed residuals of each equality family, keyed by family name."""
    n = grid.node_count
    flow = distflow_residuals(grid, topo, state)
    y = np.asarray(topo.y, dtype=float)
    z_sum = np.asarray(topo.z_ij) + np.asarray(topo.z_ji)
    sw, fx = grid.switch_lines, grid.fixed_lines
    return {
        "p-balance": flow[..., :n],
        "q-balance": flow[..., n:2 * n],
        "ohm": flow[..., 2 * n:],
        "direction-line": z_sum[..., fx] - 1.0,
        "direction-switch": z_sum[..., sw] - y,
        "radiality": (y.sum(axis=-1) - cutoff_L(grid))[..., None],
        "slack-voltage": np.asarray(state.v)[..., grid.pcc_node:grid.pcc_node + 1] - 1.0,
    }


def integrality_gaps(topo: TopologyState) -> dict[str, np.ndarray]:
    def gap(a):
        a = np.asarray(a, dtype=float)
        return np.abs(a - np.round(a))

    return {"y": gap(topo.y), "z_ij": gap(topo.z_ij), "z_ji": gap(topo.z_ji)}
