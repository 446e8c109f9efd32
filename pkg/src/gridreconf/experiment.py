"""Experiment matrix runs and the reconfiguration-regime power-system report."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .feeders import load_named_grid
from .grid import GridModel, line_losses
from .metrics import MetricsRecord, eval_metrics
from .model import Committee, TrainConfig, train_committee
from .oracle import DispatchCache, LabelSet, enumerate_radial, label_dataset
from .scenarios import DatasetSpec, build_dataset, split_dataset

METRIC_COLUMNS = ("variant", "mode", "train_data", "test_data", "predictor") + tuple(MetricsRecord.columns())
REPORT_COLUMNS = ("regime", "topology", "total_objective_pu", "total_losses_kWh", "loss_reduction_pct",
                  "undervoltage_count", "avg_voltage_pu", "pv_utilization", "relaxed_instances")
UNDERVOLTAGE = 0.95


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, columns, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
    return path


def metrics_rows(committee: Committee, data, labels, variant: str, train_name: str, test_name: str,
                 eps: float = 1e-3) -> list[dict]:
    """Ensemble row, best-member row (lowest TopErr) and one row per member."""
    grid = committee.grid
    cm = committee.cm
    base = {"variant": variant, "mode": committee.config.mode, "train_data": train_name, "test_data": test_name}
    ens = eval_metrics(grid, data, committee.predict(data), labels, eps, cm)
    members = [eval_metrics(grid, data, dv, labels, eps, cm) for dv in committee.member_predictions(data)]
    if labels is not None:
        best = min(range(len(members)), key=lambda k: (members[k].top_err, k))
        ens.top_err_best = members[best].top_err
    rows = [{**base, "predictor": "ensemble", **vars(ens)}]
    if labels is not None:
        rows.append({**base, "predictor": f"best:{best}", **vars(members[best])})
    rows += [{**base, "predictor": f"member:{k}", **vars(r)} for k, r in enumerate(members)]
    return rows


@dataclass
class ExperimentConfig:
    """One training dataset, several head variants, several test datasets."""

    grid: str = "bw33"
    train_data: DatasetSpec = field(default_factory=DatasetSpec)
    test_layouts: tuple[str, ...] = ()
    variants: tuple[str, ...] = ("SiPhyR", "InSi")
    mode: str = "unsupervised"
    epochs: int | None = None
    committee: int = 10
    seed: int = 0
    eps: float = 1e-3
    big_m: float = 10.0
    no_export: bool = False
    label_test: bool = True


@dataclass
class ReportBundle:
    metrics: list[dict]
    curves: list[dict]
    committees: dict[str, Committee]
    labels: dict[str, LabelSet]


def run_experiment(cfg: ExperimentConfig, progress=None) -> ReportBundle:
    """Train each variant on the training split and evaluate on every test set.

    The training dataset's own test split is always evaluated. Every entry
    of ``test_layouts`` adds a dataset with the same loads but a different
    solar layout, restricted to the same test instances.
    """
    grid = load_named_grid(cfg.grid)
    data = build_dataset(cfg.train_data, grid)
    train, val, test = split_dataset(data, seed=cfg.train_data.seed)
    tests = {cfg.train_data.layout: test}
    for layout in cfg.test_layouts:
        spec = DatasetSpec(**{**vars(cfg.train_data), "layout": layout})
        other = build_dataset(spec, grid)
        tests[layout] = other.subset(np.searchsorted(other.timestamps, test.timestamps))
    labels = {}
    if cfg.label_test or cfg.mode != "unsupervised":
        labels = {name: label_dataset(grid, d, cfg.no_export) for name, d in tests.items()}
    train_labels = None
    if cfg.mode != "unsupervised":
        train_labels = label_dataset(grid, train, cfg.no_export)

    metrics, curves, committees = [], [], {}
    for variant in cfg.variants:
        extra = {} if cfg.epochs is None else {"epochs": cfg.epochs}
        tc = TrainConfig.for_grid(cfg.grid, variant, mode=cfg.mode, committee=cfg.committee, seed=cfg.seed,
                                  big_m=cfg.big_m, no_export=cfg.no_export, **extra)
        com = train_committee(grid, tc, train, train_labels=train_labels, eps=cfg.eps, progress=progress)
        committees[variant] = com
        curves += [{"variant": variant, **r} for r in com.curves]
        for name, d in tests.items():
            metrics += metrics_rows(com, d, labels.get(name), variant, cfg.train_data.layout, name, cfg.eps)
    return ReportBundle(metrics, curves, committees, labels)


# power-system report ---------------------------------------------------------

@dataclass
class RegimeResult:
    regime: str
    topology: str
    objective: float
    losses_pu: float
    undervoltage: int
    avg_voltage: float
    pv_util: float
    relaxed: int


def _solution_stats(grid: GridModel, data, k, sol):
    st = sol.state
    vmag = np.sqrt(st.v[grid.non_pcc])
    return (sol.objective, float(line_losses(grid, st)), int((vmag < UNDERVOLTAGE).sum()), float(vmag.mean()),
            float(st.p_gen[data.solar_nodes].sum()))


def power_system_report(grid: GridModel, data, regimes=("none", "static", "dynamic"), no_export: bool = False,
                        cache: DispatchCache | None = None, progress=None) -> list[RegimeResult]:
    """Compare no reconfiguration, the best static topology and per-instance reconfiguration.

    Every (instance, topology) dispatch is solved once. A topology that
    cannot meet the lower voltage limit at an instance is re-solved with the
    limit dropped and counted under ``relaxed``.
    """
    for r in regimes:
        if r not in ("none", "static", "dynamic"):
            raise ConfigError(f"unknown regime {r!r}")
    cache = cache or DispatchCache(grid)
    topos = enumerate_radial(grid)
    keys = [t.closed_switch_ids(grid) for t in topos]
    n_k, n_t = len(data), len(topos)
    stats = np.full((n_k, n_t, 5), np.nan)
    feasible = np.zeros((n_k, n_t), dtype=bool)
    scen = list(data)
    for k, s in enumerate(scen):
        for t, topo in enumerate(topos):
            sol = cache.solve(s, topo.y, no_export)
            if sol.ok:
                feasible[k, t] = True
                stats[k, t] = _solution_stats(grid, data, k, sol)
        if progress:
            progress(k)

    def fill_relaxed(t):
        for k in np.flatnonzero(~feasible[:, t]):
            if np.isnan(stats[k, t, 0]):
                sol = cache.solve(scen[k], topos[t].y, no_export, v_floor=0.0)
                if sol.ok:
                    stats[k, t] = _solution_stats(grid, data, k, sol)
        return int((~feasible[:, t]).sum())

    avail = float(data.solar_available.sum())

    def result(name, label, rows, relaxed):
        pv = float(rows[:, 4].sum() / avail) if avail > 0 else float("nan")
        return RegimeResult(name, label, float(rows[:, 0].sum()), float(rows[:, 1].sum()), int(rows[:, 2].sum()),
                            float(rows[:, 3].mean()), pv, relaxed)

    out = []
    default = tuple(grid.switch_ids[i] for i, v in enumerate(grid.default_y) if v)
    if "none" in regimes and default in keys:
        t = keys.index(default)
        relaxed = fill_relaxed(t)
        out.append(result("none", ";".join(map(str, default)), stats[:, t], relaxed))
    if "static" in regimes:
        # exact enumeration of summed losses; relaxed re-solves stand in for infeasible pairs
        totals = []
        for t in range(n_t):
            fill_relaxed(t)
            totals.append(stats[:, t, 1].sum())
        best_t = min(range(n_t), key=lambda t: (totals[t], keys[t]))
        out.append(result("static", ";".join(map(str, keys[best_t])), stats[:, best_t],
                          int((~feasible[:, best_t]).sum())))
    if "dynamic" in regimes:
        rows = np.zeros((n_k, 5))
        relaxed = 0
        for k in range(n_k):
            if feasible[k].any():
                obj = np.where(feasible[k], stats[k, :, 0], np.inf)
                rows[k] = stats[k, int(np.argmin(obj))]
            else:
                relaxed += 1
                for t in range(n_t):
                    if np.isnan(stats[k, t, 0]):
                        sol = cache.solve(scen[k], topos[t].y, no_export, v_floor=0.0)
                        if sol.ok:
                            stats[k, t] = _solution_stats(grid, data, k, sol)
                rows[k] = stats[k, int(np.nanargmin(stats[k, :, 0]))]
        out.append(result("dynamic", "per-instance", rows, relaxed))
    return out


def report_rows(grid: GridModel, results: list[RegimeResult], hours_per_step: float) -> list[dict]:
    to_kwh = grid.base_kva * hours_per_step
    base = next((r.losses_pu for r in results if r.regime == "none"), None)
    rows = []
    for r in results:
        red = float("nan") if not base else 100.0 * (base - r.losses_pu) / base
        rows.append({
            "regime": r.regime, "topology": r.topology, "total_objective_pu": r.objective,
            "total_losses_kWh": r.losses_pu * to_kwh, "loss_reduction_pct": red,
            "undervoltage_count": r.undervoltage, "avg_voltage_pu": r.avg_voltage,
            "pv_utilization": r.pv_util, "relaxed_instances": r.relaxed,
        })
    return rows
