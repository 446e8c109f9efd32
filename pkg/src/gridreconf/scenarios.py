"""Scenario datasets: load perturbation, parametric profiles, solar layouts.

Load and solar time series are smooth parametric stand-ins (sums of
wrapped Gaussian bumps and raised-cosine plateaus) tuned to the qualitative
shape of each customer class. Everything is a pure function of the
:class:`DatasetSpec`, so a dataset regenerates bit-for-bit from its seed.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import UnknownLayout
from .feeders import COMMERCIAL_KINDS, TPC94_COMMERCIAL, load_named_grid, solar_layout
from .grid import GridModel

RESIDENTIAL_KINDS = ("residential-nominal", "early-riser", "weekend", "covid", "summer-peak", "winter-peak")
PROFILE_KINDS = RESIDENTIAL_KINDS + ("hospital", "office", "restaurant", "retail", "warehouse", "solar")
LOAD_MODES = ("perturbed", "residential", "mixed")
SOLAR_MODES = ("profile", "flat", "none")

DELTA_RANGE = (0.3, 1.7)
NOISE = 0.05
INVERTER_Q_RATIO = 0.44
PCC_HEADROOM = 2.0


def _bump(t, mu, sigma):
    d = (t - mu + 12.0) % 24.0 - 12.0
    return math.exp(-0.5 * (d / sigma) ** 2)


def _plateau(t, start, stop, ramp=1.0):
    """Raised-cosine window equal to 1 on [start, stop], 0 outside the ramps."""
    if start <= t <= stop:
        return 1.0
    if start - ramp < t < start:
        return 0.5 - 0.5 * math.cos(math.pi * (t - start + ramp) / ramp)
    if stop < t < stop + ramp:
        return 0.5 + 0.5 * math.cos(math.pi * (t - stop) / ramp)
    return 0.0


def is_weekend(day: int) -> bool:
    return day % 7 in (5, 6)


def synth_profile(kind: str, t: float, day: int = 0) -> float:
    """Per-unit multiplier of a customer class at hour ``t`` of ``day``.

    Values lie in [0, 1.3]. ``solar`` is an availability factor in [0, 1].
    """
    if not 0.0 <= t < 24.0:
        raise ValueError("time of day must lie in [0, 24)")
    season = math.cos(2.0 * math.pi * (day - 172) / 365.0)  # +1 near the June solstice
    if kind == "residential-nominal":
        val = 0.3 + 0.5 * _bump(t, 7.5, 1.1) + 0.8 * _bump(t, 19.5, 1.7)
    elif kind == "early-riser":
        val = 0.3 + 0.5 * _bump(t, 6.0, 1.1) + 0.8 * _bump(t, 18.0, 1.7)
    elif kind == "weekend":
        val = 0.4 + 0.65 * _bump(t, 16.5, 3.5)
    elif kind == "covid":
        val = 0.3 + 0.45 * _bump(t, 9.5, 1.5) + 0.95 * _bump(t, 19.5, 2.0)
    elif kind == "summer-peak":
        val = 0.35 + 0.9 * _bump(t, 16.5, 4.0)
    elif kind == "winter-peak":
        val = 0.25 + 0.35 * _bump(t, 8.0, 1.3) + 0.45 * _bump(t, 22.0, 1.5)
    elif kind == "hospital":
        val = 0.5 + 0.5 * _plateau(t, 6.0, 18.0, 1.5)
    elif kind == "office":
        if is_weekend(day):
            return 0.2
        val = 0.2 + 0.55 * _plateau(t, 5.0, 19.0, 1.0) + 0.25 * _bump(t, 6.0, 1.0)
    elif kind == "restaurant":
        cyc = 0.5 - 0.5 * math.cos(2.0 * math.pi * (t - 5.0) / 6.0)
        val = (0.3 + 0.6 * cyc * _plateau(t, 6.0, 22.0, 1.0)) * (1.0 + 0.2 * season)
    elif kind == "retail":
        val = (0.25 + 0.75 * _plateau(t, 9.0, 16.0, 2.0)) * (1.0 + 0.15 * season)
    elif kind == "warehouse":
        val = 0.15 + 0.85 * _plateau(t, 10.0, 15.0, 1.0)
    elif kind == "solar":
        daylength = 12.0 + 3.0 * season
        sunrise = 12.0 - daylength / 2.0
        if not sunrise < t < sunrise + daylength:
            return 0.0
        peak = 0.8 + 0.2 * season
        val = peak * math.sin(math.pi * (t - sunrise) / daylength) ** 1.5
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    return float(min(max(val, 0.0), 1.3))


@dataclass(frozen=True)
class DatasetSpec:
    grid: str = "bw33"
    load_mode: str = "perturbed"
    layout: str = "DD-U"
    solar_mode: str = "profile"
    count: int = 8760
    seed: int = 0

    def __post_init__(self):
        if self.count <= 0:
            raise ValueError("instance count must be positive")
        if self.load_mode not in LOAD_MODES:
            raise ValueError(f"load_mode must be one of {LOAD_MODES}")
        if self.solar_mode not in SOLAR_MODES:
            raise ValueError(f"solar_mode must be one of {SOLAR_MODES}")
        solar_layout(self.grid, self.layout)

    @property
    def steps_per_day(self) -> int:
        return 288 if self.grid == "tpc94" else 24


@dataclass
class ScenarioInstance:
    """One operating point. ``x_vector`` is P loads then Q loads over non-PCC nodes."""

    timestamp: int
    p_load: np.ndarray
    q_load: np.ndarray
    p_gen_min: np.ndarray
    p_gen_max: np.ndarray
    q_gen_min: np.ndarray
    q_gen_max: np.ndarray
    non_pcc: np.ndarray = field(repr=False)

    @property
    def x_vector(self) -> np.ndarray:
        return np.concatenate([self.p_load[self.non_pcc], self.q_load[self.non_pcc]])

    @property
    def gen_nodes(self) -> np.ndarray:
        return np.flatnonzero((self.p_gen_max > 0) | (self.q_gen_max > 0) | (self.q_gen_min < 0))


@dataclass
class Dataset:
    """Stacked scenarios; every array has one row per instance."""

    grid: GridModel
    timestamps: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    p_gen_min: np.ndarray
    p_gen_max: np.ndarray
    q_gen_min: np.ndarray
    q_gen_max: np.ndarray
    solar_nodes: np.ndarray
    nameplate: np.ndarray

    def __len__(self) -> int:
        return len(self.timestamps)

    def __getitem__(self, k: int) -> ScenarioInstance:
        return ScenarioInstance(
            int(self.timestamps[k]), self.p_load[k], self.q_load[k], self.p_gen_min[k],
            self.p_gen_max[k], self.q_gen_min[k], self.q_gen_max[k], self.grid.non_pcc,
        )

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def x(self) -> np.ndarray:
        idx = self.grid.non_pcc
        return np.concatenate([self.p_load[:, idx], self.q_load[:, idx]], axis=1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            self.grid, self.timestamps[idx], self.p_load[idx], self.q_load[idx], self.p_gen_min[idx],
            self.p_gen_max[idx], self.q_gen_min[idx], self.q_gen_max[idx], self.solar_nodes, self.nameplate,
        )

    @property
    def solar_available(self) -> np.ndarray:
        return self.p_gen_max[:, self.solar_nodes]


def generator_bounds(grid: GridModel, nameplate: np.ndarray, available: np.ndarray):
    """Per-node generator limits for availability-scaled solar plus the PCC source.

    ``nameplate`` is per node (pu); ``available`` has one row per instance.
    """
    k = available.shape[0]
    n = grid.node_count
    peak_p = DELTA_RANGE[1] * sum(grid.nominal_p)
    peak_q = DELTA_RANGE[1] * sum(grid.nominal_q)
    p_min = np.zeros((k, n))
    p_max = np.array(available, dtype=float)
    q_max = np.tile(INVERTER_Q_RATIO * nameplate, (k, 1))
    q_min = -q_max
    pcc = grid.pcc_node
    p_max[:, pcc] += PCC_HEADROOM * peak_p
    q_max[:, pcc] += PCC_HEADROOM * peak_q
    q_min[:, pcc] -= PCC_HEADROOM * peak_q
    return p_min, p_max, q_min, q_max


def perturb_loads(nominal_p, nominal_q, rng, delta=None):
    """Scale every node's (P, Q) by an independent uniform factor in [0.3, 1.7]."""
    nominal_p = np.asarray(nominal_p, dtype=float)
    if delta is None:
        delta = rng.uniform(*DELTA_RANGE, size=nominal_p.shape)
    return nominal_p * delta, np.asarray(nominal_q, dtype=float) * delta


def node_profiles(grid: GridModel, load_mode: str, rng) -> list[str | None]:
    """Profile kind per node for profile-driven load modes."""
    kinds: list[str | None] = [None] * grid.node_count
    for j in range(grid.node_count):
        if grid.nominal_p[j] > 0 or grid.nominal_q[j] > 0:
            kinds[j] = RESIDENTIAL_KINDS[int(rng.integers(len(RESIDENTIAL_KINDS)))]
    if load_mode == "mixed" and grid.name == "tpc94":
        for sites in TPC94_COMMERCIAL.values():
            for label, code in sites:
                kinds[grid.node_index(label)] = COMMERCIAL_KINDS[code]
    return kinds


def build_dataset(spec: DatasetSpec, grid: GridModel | None = None) -> Dataset:
    grid = grid or load_named_grid(spec.grid)
    layout = solar_layout(spec.grid, spec.layout)
    rng = np.random.default_rng(spec.seed)
    n, k = grid.node_count, spec.count
    nom_p = np.array(grid.nominal_p)
    nom_q = np.array(grid.nominal_q)

    nameplate = np.zeros(n)
    for label, kw in layout.sites:
        nameplate[grid.node_index(label)] += kw / grid.base_kva
    solar_nodes = np.flatnonzero(nameplate > 0)

    steps = spec.steps_per_day
    timestamps = np.arange(k)
    hours = (timestamps % steps) * (24.0 / steps)
    days = timestamps // steps

    if spec.load_mode == "perturbed":
        p_load, q_load = perturb_loads(nom_p, nom_q, rng, rng.uniform(*DELTA_RANGE, size=(k, n)))
    else:
        kinds = node_profiles(grid, spec.load_mode, rng)
        mult = np.zeros((k, n))
        cache: dict[tuple[str, float, int], float] = {}
        for j, kind in enumerate(kinds):
            if kind is None:
                continue
            for i in range(k):
                key = (kind, hours[i], int(days[i]))
                if key not in cache:
                    cache[key] = synth_profile(kind, hours[i], int(days[i]))
                mult[i, j] = cache[key]
        mult *= 1.0 + rng.uniform(-NOISE, NOISE, size=(k, n))
        p_load, q_load = nom_p * mult, nom_q * mult

    if spec.solar_mode == "profile":
        avail = np.array([synth_profile("solar", h, int(d)) for h, d in zip(hours, days)])
        avail = np.clip(avail[:, None] * (1.0 + rng.uniform(-NOISE, NOISE, size=(k, n))), 0.0, 1.0)
    elif spec.solar_mode == "flat":
        avail = np.ones((k, n))
    else:
        avail = np.zeros((k, n))
    p_min, p_max, q_min, q_max = generator_bounds(grid, nameplate, avail * nameplate)
    return Dataset(grid, timestamps, p_load, q_load, p_min, p_max, q_min, q_max, solar_nodes, nameplate)


def split_dataset(data: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0):
    """Random (train, val, test) split; val and test sizes are floored."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    n = len(data)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(math.floor(ratios[1] * n + 1e-9))
    n_test = int(math.floor(ratios[2] * n + 1e-9))
    n_train = n - n_val - n_test
    train = np.sort(perm[:n_train])
    val = np.sort(perm[n_train:n_train + n_val])
    test = np.sort(perm[n_train + n_val:])
    return data.subset(train), data.subset(val), data.subset(test)


def solar_penetration(grid: GridModel, layout_name: str) -> float:
    """Nameplate solar over nominal total load."""
    layout = solar_layout(grid.name, layout_name)
    return layout.total_kw / (sum(grid.nominal_p) * grid.base_kva)


def write_scenarios_csv(data: Dataset, path) -> Path:
    path = Path(path)
    grid = data.grid
    n = grid.node_count
    header = ["timestamp"]
    header += [f"P_L_{j}" for j in range(n)] + [f"Q_L_{j}" for j in range(n)]
    header += [f"Pbar_G_{j}" for j in data.solar_nodes]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        avail = data.solar_available
        for i in range(len(data)):
            row = [int(data.timestamps[i])]
            row += [repr(float(v)) for v in data.p_load[i]]
            row += [repr(float(v)) for v in data.q_load[i]]
            row += [repr(float(v)) for v in avail[i]]
            w.writerow(row)
    return path


def read_scenarios_csv(path, grid: GridModel, layout_name: str) -> Dataset:
    """Inverse of :func:`write_scenarios_csv`; the layout supplies solar nameplates."""
    layout = solar_layout(grid.name, layout_name)
    n = grid.node_count
    nameplate = np.zeros(n)
    for label, kw in layout.sites:
        nameplate[grid.node_index(label)] += kw / grid.base_kva
    solar_nodes = np.flatnonzero(nameplate > 0)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [list(map(float, r)) for r in reader]
    expected = 1 + 2 * n + len(solar_nodes)
    if len(header) != expected:
        raise UnknownLayout(f"{path} has {len(header)} columns, layout {layout_name!r} expects {expected}")
    arr = np.array(rows, dtype=float).reshape(-1, expected)
    avail = np.zeros((len(arr), n))
    avail[:, solar_nodes] = arr[:, 1 + 2 * n:]
    p_min, p_max, q_min, q_max = generator_bounds(grid, nameplate, avail)
    return Dataset(grid, arr[:, 0].astype(int), arr[:, 1:1 + n].copy(), arr[:, 1 + n:1 + 2 * n].copy(),
                   p_min, p_max, q_min, q_max, solar_nodes, nameplate)
