"""``gridreconf`` command line.

A dataset directory holds ``dataset.cfg`` (the generating spec) and
``scenarios.csv``. ``label`` adds ``labels_<split>.csv`` files, ``train``
writes ``model_<head>.npz`` and ``curves.csv``, ``eval`` writes
``metrics.csv`` and ``report`` writes ``report.csv`` with figures alongside.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import GridReconfError
from .experiment import METRIC_COLUMNS, REPORT_COLUMNS, metrics_rows, power_system_report, report_rows, write_rows
from .feeders import load_named_grid
from .model import CURVE_COLUMNS, HEADS, Committee, train_committee
from .oracle import export_warmstart, label_dataset, read_labels_csv, write_labels_csv
from .plotting import plot_curves, plot_report
from .scenarios import DatasetSpec, build_dataset, read_scenarios_csv, split_dataset, write_scenarios_csv

SPLITS = ("train", "val", "test")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="overrides the seed in config files")
    parser.add_argument("--eps", type=float, default=d(1e-3), help="violation threshold in pu")
    parser.add_argument("--big-m", type=float, default=d(None), help="big-M constant for switch Ohm rows")
    parser.add_argument("--no-export", action="store_true", default=d(False), help="forbid export to the PCC")


# dataset directories ---------------------------------------------------------

def load_dataset_dir(path):
    path = Path(path)
    values = cfgmod.read_config(path / "dataset.cfg")
    spec = cfgmod.dataset_spec(values)
    grid = load_named_grid(spec.grid)
    data = read_scenarios_csv(path / "scenarios.csv", grid, spec.layout)
    return spec, grid, data


def dataset_splits(spec: DatasetSpec, data) -> dict:
    return dict(zip(SPLITS, split_dataset(data, seed=spec.seed)))


def load_labels(path, grid, split: str, data=None):
    f = Path(path) / f"labels_{split}.csv"
    if not f.exists():
        return None
    labels = read_labels_csv(grid, f)
    return labels if data is None else labels.subset_by_timestamp(data.timestamps)


# subcommands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    values = cfgmod.read_config(args.config) if args.config else {}
    over = {"grid": args.grid, "layout": args.layout, "load_mode": args.load_mode,
            "solar_mode": args.solar_mode, "count": args.count, "seed": args.seed}
    spec = cfgmod.dataset_spec(values, **over)
    data = build_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgmod.write_config({k: getattr(spec, k) for k in cfgmod.DATASET_KEYS}, out / "dataset.cfg")
    write_scenarios_csv(data, out / "scenarios.csv")
    _log(f"wrote {len(data)} scenarios to {out}")
    return 0


def cmd_label(args) -> int:
    spec, grid, data = load_dataset_dir(args.data)
    parts = dataset_splits(spec, data)
    for split in cfgmod.split_list(args.splits):
        if split not in parts:
            raise GridReconfError(f"unknown split {split!r}")
        labels = label_dataset(grid, parts[split], args.no_export)
        write_labels_csv(grid, labels, Path(args.data) / f"labels_{split}.csv")
        _log(f"labelled {len(labels.y)} {split} scenarios")
    return 0


def cmd_train(args) -> int:
    spec, grid, data = load_dataset_dir(args.data)
    parts = dataset_splits(spec, data)
    values = cfgmod.read_config(args.config) if args.config else {}
    heads = cfgmod.split_list(args.heads or values.get("variants") or "SiPhyR")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    val_labels = load_labels(args.data, grid, "val", parts["val"])
    curves = []
    for head in heads:
        if head not in HEADS:
            raise GridReconfError(f"unknown head {head!r}")
        tc = cfgmod.train_config(values, spec.grid, head, seed=args.seed, big_m=args.big_m,
                                 epochs=args.epochs, committee=args.committee, mode=args.mode,
                                 no_export=args.no_export or values.get("no_export"))
        train_labels = None
        if tc.mode != "unsupervised":
            train_labels = load_labels(args.data, grid, "train", parts["train"])
        com = train_committee(grid, tc, parts["train"], parts["val"], val_labels, train_labels, args.eps,
                              eval_every=args.eval_every)
        com.info = {"train_data": Path(args.data).name, "layout": spec.layout}
        com.save(out / f"model_{head}.npz")
        curves += [{"variant": head, **r} for r in com.curves]
        _log(f"trained {head}: {tc.committee} member(s), {tc.epochs} epochs")
    write_rows(out / "curves.csv", ("variant",) + CURVE_COLUMNS, curves)
    if not args.no_plots:
        plot_curves(curves, out / "curves.png")
    return 0


def cmd_eval(args) -> int:
    rows = []
    for model_path in args.model:
        committee = None
        for data_dir in args.data:
            spec, grid, data = load_dataset_dir(data_dir)
            if committee is None:
                committee = Committee.load(model_path, grid)
            test = dataset_splits(spec, data)["test"]
            labels = load_labels(data_dir, grid, "test", test)
            train_name = committee.info.get("train_data", Path(model_path).parent.name)
            rows += metrics_rows(committee, test, labels, committee.config.head, train_name,
                                 Path(data_dir).name, args.eps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "metrics.csv", METRIC_COLUMNS, rows)
    return 0


def cmd_report(args) -> int:
    spec, grid, data = load_dataset_dir(args.data)
    if args.split != "all":
        data = dataset_splits(spec, data)[args.split]
    regimes = cfgmod.split_list(args.regimes)
    results = power_system_report(grid, data, regimes, args.no_export)
    rows = report_rows(grid, results, 24.0 / spec.steps_per_day)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "report.csv", REPORT_COLUMNS, rows)
    if not args.no_plots:
        plot_report(rows, out / "report.png")
        curves = out / "curves.csv"
        if curves.exists():
            import csv

            with open(curves, newline="") as fh:
                plot_curves(list(csv.DictReader(fh)), out / "curves.png")
    return 0


def cmd_warmstart(args) -> int:
    spec, grid, data = load_dataset_dir(args.data)
    committee = Committee.load(args.model, grid)
    pos = np.flatnonzero(data.timestamps == args.timestamp)
    if len(pos) == 0:
        raise GridReconfError(f"timestamp {args.timestamp} not in dataset")
    one = data.subset(pos)
    psi = committee.predict(one).row(0)
    big_m = args.big_m if args.big_m is not None else committee.config.big_m
    ws = export_warmstart(grid, one[0], psi, big_m, args.ws_eps, args.no_export or committee.config.no_export)
    ws.write(args.out)
    _log(f"{len(ws.values)} values, {len(ws.omitted)} omitted")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridreconf", description="Learning-to-optimize grid reconfiguration.")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        _globals(sp, suppress=True)
        sp.set_defaults(func=fn)
        return sp

    g = add("generate", cmd_generate, "synthesize a scenario dataset")
    g.add_argument("--config")
    g.add_argument("--grid")
    g.add_argument("--layout")
    g.add_argument("--load-mode")
    g.add_argument("--solar-mode")
    g.add_argument("--count", type=int)
    g.add_argument("--out", required=True)

    lb = add("label", cmd_label, "oracle labels for dataset splits")
    lb.add_argument("data")
    lb.add_argument("--splits", default="val,test")

    t = add("train", cmd_train, "train one or more head variants")
    t.add_argument("data")
    t.add_argument("--config")
    t.add_argument("--heads", help="comma-separated head names")
    t.add_argument("--mode", choices=("unsupervised", "supervised", "supervised-pen"))
    t.add_argument("--epochs", type=int)
    t.add_argument("--committee", type=int)
    t.add_argument("--eval-every", type=int, default=10)
    t.add_argument("--no-plots", action="store_true")
    t.add_argument("--out", required=True)

    e = add("eval", cmd_eval, "metrics of trained models on test splits")
    e.add_argument("--model", action="append", required=True)
    e.add_argument("--data", action="append", required=True)
    e.add_argument("--out", required=True)

    r = add("report", cmd_report, "no/static/dynamic reconfiguration comparison")
    r.add_argument("data")
    r.add_argument("--split", default="all", choices=("all",) + SPLITS)
    r.add_argument("--regimes", default="none,static,dynamic")
    r.add_argument("--no-plots", action="store_true")
    r.add_argument("--out", required=True)

    w = add("warmstart", cmd_warmstart, "export a MIP warm start from a prediction")
    w.add_argument("data")
    w.add_argument("--model", required=True)
    w.add_argument("--timestamp", type=int, required=True)
    w.add_argument("--ws-eps", type=float, default=1e-6)
    w.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GridReconfError, OSError) as exc:
        _log(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
