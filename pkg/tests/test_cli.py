import filecmp

import pytest

from gridreconf.cli import main
from gridreconf.oracle import WarmStart


def _pipeline(root, seed=1):
    data = root / "data"
    assert main(["--seed", str(seed), "generate", "--grid", "bw33", "--count", "40", "--out", str(data)]) == 0
    assert main(["label", str(data), "--splits", "val,test"]) == 0
    assert main(["train", str(data), "--heads", "SiPhyR,InSi", "--epochs", "3", "--committee", "2",
                 "--eval-every", "2", "--no-plots", "--out", str(root / "run")]) == 0
    assert main(["eval", "--model", str(root / "run" / "model_SiPhyR.npz"), "--model",
                 str(root / "run" / "model_InSi.npz"), "--data", str(data), "--out", str(root / "run")]) == 0
    return data


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("a")
    b = tmp_path_factory.mktemp("b")
    _pipeline(a)
    _pipeline(b)
    return a, b


@pytest.mark.parametrize("name", ["data/scenarios.csv", "data/dataset.cfg", "data/labels_val.csv",
                                  "data/labels_test.csv", "run/curves.csv", "run/metrics.csv"])
def test_outputs_are_byte_identical(two_runs, name):
    a, b = two_runs
    assert (a / name).exists()
    assert filecmp.cmp(a / name, b / name, shallow=False)


def test_metrics_layout(two_runs):
    lines = (two_runs[0] / "run" / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("variant,mode,train_data,test_data,predictor,disp_err")
    # two models: ensemble, best member and two members each
    assert len(lines) == 1 + 2 * 4


def test_report_and_warmstart(tmp_path, two_runs):
    data = two_runs[0] / "data"
    out = tmp_path / "rep"
    assert main(["report", str(data), "--split", "test", "--out", str(out)]) == 0
    text = (out / "report.csv").read_text().splitlines()
    assert text[0].startswith("regime,topology")
    assert [r.split(",")[0] for r in text[1:]] == ["none", "static", "dynamic"]
    assert (out / "report.png").stat().st_size > 0

    ts = int((data / "scenarios.csv").read_text().splitlines()[1].split(",")[0])
    ws_path = tmp_path / "ws.txt"
    rc = main(["warmstart", str(data), "--model", str(two_runs[0] / "run" / "model_SiPhyR.npz"),
               "--timestamp", str(ts), "--out", str(ws_path)])
    assert rc == 0
    ws = WarmStart.read(ws_path)
    assert ws.values


def test_seed_changes_data(tmp_path):
    for s in (1, 2):
        assert main(["generate", "--seed", str(s), "--count", "5", "--out", str(tmp_path / str(s))]) == 0
    assert not filecmp.cmp(tmp_path / "1" / "scenarios.csv", tmp_path / "2" / "scenarios.csv", shallow=False)


def test_errors_return_code(tmp_path, capsys):
    assert main(["label", str(tmp_path / "missing")]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["train"])
