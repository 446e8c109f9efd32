import csv

import numpy as np
import pytest

from gridreconf.errors import ConfigError
from gridreconf.experiment import (METRIC_COLUMNS, REPORT_COLUMNS, ExperimentConfig, power_system_report,
                                   report_rows, write_rows)
from gridreconf.oracle import brute_force_optimum, enumerate_radial, solve_fixed_topology
from gridreconf.scenarios import DatasetSpec


@pytest.fixture(scope="module")
def six_report(six, six_data):
    return {r.regime: r for r in power_system_report(six, six_data)}


def test_regime_ordering(six_report):
    none, static, dyn = six_report["none"], six_report["static"], six_report["dynamic"]
    assert static.losses_pu <= none.losses_pu + 1e-12
    assert dyn.objective <= static.objective + 1e-12
    assert dyn.objective <= none.objective + 1e-12
    assert none.topology == "4;6"


def test_dynamic_matches_oracle(six, six_data, six_report):
    total = sum(brute_force_optimum(six, s).objective for s in six_data)
    assert six_report["dynamic"].objective == pytest.approx(total, rel=1e-9)


def test_static_is_best_fixed_topology(six, six_data, six_report):
    sums = []
    for topo in enumerate_radial(six):
        sols = [solve_fixed_topology(six, s, topo) for s in six_data]
        if all(s.ok for s in sols):
            sums.append(sum(s.objective for s in sols))
    assert six_report["static"].objective <= max(sums)
    assert six_report["static"].relaxed == 0


def test_report_rows_units(six, six_report):
    rows = report_rows(six, list(six_report.values()), hours_per_step=0.5)
    by = {r["regime"]: r for r in rows}
    assert by["none"]["loss_reduction_pct"] == 0.0
    assert by["none"]["total_losses_kWh"] == pytest.approx(six_report["none"].losses_pu * 1000.0 * 0.5)
    assert by["dynamic"]["loss_reduction_pct"] >= 0.0


def test_unknown_regime(six, six_data):
    with pytest.raises(ConfigError):
        power_system_report(six, six_data, regimes=("weekly",))


def test_write_rows(tmp_path):
    path = write_rows(tmp_path / "r.csv", ("a", "b"), [{"a": 0.1, "b": "x"}, {"a": 1}])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows == [["a", "b"], ["0.1", "x"], ["1", ""]]


def test_column_sets():
    assert METRIC_COLUMNS[:5] == ("variant", "mode", "train_data", "test_data", "predictor")
    assert "top_err_best" in METRIC_COLUMNS
    assert REPORT_COLUMNS[0] == "regime"


def test_run_experiment_small():
    from gridreconf.experiment import run_experiment

    cfg = ExperimentConfig(train_data=DatasetSpec(count=60, seed=3), test_layouts=("DD-I",),
                           variants=("SiPhyR", "InSi2R"), epochs=2, committee=2)
    out = run_experiment(cfg)
    assert set(out.committees) == {"SiPhyR", "InSi2R"}
    # per variant and test set: ensemble, best member, two members
    assert len(out.metrics) == 2 * 2 * 4
    ens = [r for r in out.metrics if r["predictor"] == "ensemble"]
    assert {r["test_data"] for r in ens} == {"DD-U", "DD-I"}
    assert all(np.isfinite(r["top_err"]) and r["top_err_best"] <= 1 for r in ens)
    assert len(out.curves) == 2 * 2 * 2
    assert len(out.labels["DD-U"].y) == len(out.labels["DD-I"].y) == 6
