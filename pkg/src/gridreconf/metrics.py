"""Optimality, feasibility and power-system metrics over a batch of predictions.

Inequality statistics are per-instance values averaged over the batch: the
mean hinge over all rows, the largest hinge, and the number of rows above
``eps``. Losses, undervoltage counts and voltages are also per-instance
averages; kWh figures appear only in the power-system report.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .completion import CompletionModel, DecisionVector
from .errors import MissingLabels
from .grid import GridModel, line_losses

UNDERVOLTAGE = 0.95


@dataclass
class MetricsRecord:
    disp_err: float = float("nan")
    volt_err: float = float("nan")
    top_err: float = float("nan")
    top_err_best: float = float("nan")
    ineq_mean: float = 0.0
    ineq_max: float = 0.0
    ineq_count: float = 0.0
    line_losses: float = 0.0
    undervoltage: float = 0.0
    avg_voltage: float = 0.0
    pv_util: float = float("nan")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        return [repr(float(v)) for v in asdict(self).values()]


def topology_error(y, y_star) -> np.ndarray:
    """Per-instance mean squared switch-state difference."""
    return np.mean((np.asarray(y, dtype=float) - np.asarray(y_star, dtype=float)) ** 2, axis=-1)


def optimality_errors(grid: GridModel, dv: DecisionVector, labels):
    """Per-instance (DispErr, VoltErr, TopErr) against oracle labels."""
    st = dv.state
    n = grid.node_count
    disp = np.sum((st.p_gen - labels.p_gen) ** 2 + (st.q_gen - labels.q_gen) ** 2, axis=-1) / n
    volt = np.sum((np.sqrt(st.v) - np.sqrt(labels.v)) ** 2, axis=-1) / n
    return disp, volt, topology_error(dv.topology.y, labels.y)


def pv_utilization(data, p_gen) -> float:
    avail = data.solar_available.sum()
    if avail <= 0:
        return float("nan")
    return float(np.asarray(p_gen)[:, data.solar_nodes].sum() / avail)


def eval_metrics(grid: GridModel, data, dv: DecisionVector, labels=None, eps: float = 1e-3,
                 model: CompletionModel | None = None, require_labels: bool = False) -> MetricsRecord:
    """Metrics for batched decisions ``dv`` aligned row-for-row with ``data``.

    Without labels the optimality fields stay NaN, unless ``require_labels``
    is set, which raises :class:`MissingLabels`.
    """
    model = model or CompletionModel(grid)
    bounds = (data.p_gen_min, data.p_gen_max, data.q_gen_min, data.q_gen_max)
    hinge = np.maximum(model.inequalities(dv, bounds), 0.0)
    st = dv.state
    v_mag = np.sqrt(np.maximum(st.v, 0.0))[:, grid.non_pcc]
    rec = MetricsRecord(
        ineq_mean=float(hinge.mean(axis=-1).mean()),
        ineq_max=float(hinge.max(axis=-1).mean()),
        ineq_count=float((hinge > eps).sum(axis=-1).mean()),
        line_losses=float(np.mean(line_losses(grid, st))),
        undervoltage=float((v_mag < UNDERVOLTAGE).sum(axis=-1).mean()),
        avg_voltage=float(v_mag.mean()),
        pv_util=pv_utilization(data, st.p_gen),
    )
    if labels is None:
        if require_labels:
            raise MissingLabels("optimality metrics need oracle labels")
        return rec
    if len(labels.y) != len(data):
        raise MissingLabels("labels are not aligned with the evaluated scenarios")
    disp, volt, top = optimality_errors(grid, dv, labels)
    rec.disp_err = float(disp.mean())
    rec.volt_err = float(volt.mean())
    rec.top_err = float(top.mean())
    return rec
