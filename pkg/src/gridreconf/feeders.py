"""Embedded BW-33 and TPC-94 feeder data and the grid CSV format.

Line and load tables are kept in their published units (ohm, kW, kVAR) with
published node numbering; conversion to per-unit happens when a
:class:`GridModel` is built. Node labels keep the published numbers while
node ids are zero-based.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import UnknownLayout
from .grid import GridModel, Line

BW33_LINES = """\
1 1 2 0.0922 0.0470
2 2 3 0.4930 0.2511
3 3 4 0.3660 0.1864
4 4 5 0.3811 0.1941
5 5 6 0.8190 0.707
6 6 7 0.1872 0.6188
7 7 8 0.7114 0.2351
8 8 9 1.030 0.7400
9 9 10 1.0440 0.7400
10 10 11 0.1966 0.0650
11 11 12 0.3744 0.1238
12 12 13 1.4680 1.1550
13 13 14 0.5416 0.7129
14 14 15 0.5910 0.5260
15 15 16 0.7463 0.5450
16 16 17 1.2890 1.7210
17 17 18 0.7320 0.5740
18 2 19 0.1640 0.1565
19 19 20 1.5042 1.3554
20 20 21 0.4095 0.4784
21 21 22 0.7089 0.9373
22 3 23 0.4512 0.3083
23 23 24 0.8980 0.7091
24 24 25 0.8960 0.7011
25 6 26 0.2030 0.1034
26 26 27 0.2842 0.1447
27 27 28 1.0590 0.9337
28 28 29 0.8042 0.7006
29 29 30 0.5075 0.2585
30 30 31 0.9744 0.9630
31 31 32 0.3105 0.3619
32 32 33 0.3410 0.5302
33 8 21 2.00 2.00
34 9 15 2.00 2.00
35 12 22 2.00 2.00
36 18 33 0.500 0.500
37 25 29 0.500 0.500
"""

BW33_LOADS = """\
2 100 60
3 90 40
4 120 80
5 60 30
6 60 20
7 200 100
8 200 100
9 60 20
10 60 20
11 45 30
12 60 35
13 60 35
14 120 80
15 60 10
16 60 20
17 60 20
18 90 40
19 90 40
20 90 40
21 90 40
22 90 40
23 90 50
24 420 200
25 420 200
26 60 25
27 60 25
28 60 20
29 120 70
30 200 600
31 150 70
32 210 100
33 60 40
"""

TPC94_LINES = """\
1 1 12 0.0085 0.0290
2 12 13 0.0092 0.0188
3 13 14 0.0103 0.0212
4 14 15 0.0040 0.0082
5 15 16 0.0092 0.0188
6 16 17 0.0017 0.0035
7 17 18 0.0018 0.0060
8 18 19 0.0046 0.0094
9 18 20 0.0103 0.0212
10 18 21 0.0046 0.0094
11 2 22 0.0034 0.0071
12 22 23 0.0149 0.0303
13 23 24 0.0011 0.0024
14 23 25 0.0034 0.0071
15 3 26 0.0050 0.0169
16 26 27 0.0023 0.0047
17 27 28 0.0023 0.0047
18 28 29 0.0069 0.0141
19 29 30 0.0017 0.0035
20 30 31 0.0074 0.0153
21 31 32 0.0103 0.0212
22 32 33 0.0069 0.0141
23 32 34 0.0086 0.0176
24 34 35 0.0057 0.0118
25 4 36 0.0025 0.0084
26 36 37 0.0046 0.0094
27 37 38 0.0109 0.0223
28 38 39 0.0021 0.0072
29 39 40 0.0057 0.0118
30 5 41 0.0086 0.0173
31 41 42 0.0057 0.0118
32 42 43 0.0057 0.0118
33 43 44 0.0011 0.0024
34 44 45 0.0074 0.0153
35 45 46 0.0023 0.0047
36 46 47 0.0218 0.0447
37 47 48 0.0017 0.0035
38 48 49 0.0017 0.0035
39 49 50 0.0034 0.0071
40 50 51 0.0092 0.0188
41 49 52 0.0086 0.0176
42 52 53 0.0092 0.0188
43 6 54 0.0021 0.0072
44 54 55 0.0017 0.0035
45 55 56 0.0057 0.0118
46 56 57 0.0103 0.0212
47 7 58 0.0106 0.0362
48 58 59 0.0029 0.0059
49 59 60 0.0029 0.0059
50 60 61 0.0017 0.0035
51 61 62 0.0034 0.0071
52 62 63 0.0017 0.0035
53 63 64 0.0034 0.0071
54 64 65 0.0023 0.0047
55 65 66 0.0057 0.0118
56 8 67 0.0099 0.0338
57 67 68 0.0235 0.0482
58 68 69 0.0023 0.0047
59 69 70 0.0018 0.0060
60 70 71 0.0017 0.0035
61 71 72 0.0011 0.0024
62 72 73 0.0046 0.0094
63 73 74 0.0103 0.0212
64 74 75 0.0011 0.0036
65 9 76 0.0021 0.0072
66 76 77 0.0074 0.0153
67 77 78 0.0053 0.0181
68 78 79 0.0096 0.0326
69 79 80 0.0021 0.0072
70 80 81 0.0032 0.0109
71 81 82 0.0025 0.0084
72 82 83 0.0011 0.0023
73 10 84 0.0142 0.0483
74 84 85 0.0014 0.0048
75 85 86 0.0025 0.0084
76 86 87 0.0021 0.0072
77 11 88 0.0110 0.0374
78 88 89 0.0057 0.0193
79 89 90 0.0021 0.0072
80 90 91 0.0057 0.0115
81 91 92 0.0057 0.0115
82 92 93 0.0040 0.0082
83 93 94 0.0137 0.0282
84 16 66 0.0057 0.0118
85 18 71 0.0057 0.0118
86 22 54 0.0057 0.0118
87 23 83 0.0149 0.0306
88 24 87 0.0200 0.0411
89 25 29 0.0235 0.0473
90 27 37 0.0040 0.0082
91 31 94 0.0034 0.0071
92 39 43 0.0023 0.0047
93 40 50 0.0034 0.0071
94 45 57 0.0011 0.0024
95 51 53 0.0086 0.0176
96 64 75 0.0017 0.0035
97 70 78 0.0077 0.0158
"""

TPC94_LOADS = """\
13 100 50
14 300 200
15 350 250
16 220 100
17 1100 800
18 400 320
19 300 200
20 300 230
21 300 260
23 1200 800
24 800 600
25 700 500
27 300 150
28 500 350
29 700 400
30 1200 1000
31 300 300
32 400 350
33 50 20
34 50 20
35 50 10
36 50 30
37 100 60
38 100 70
39 1800 1300
40 200 120
42 1800 1600
43 200 150
44 200 100
45 800 600
46 100 60
47 100 60
48 20 10
49 20 10
50 20 10
51 20 10
52 200 160
53 50 30
55 30 20
56 800 700
57 200 150
61 200 160
62 800 600
63 500 300
64 500 350
65 500 300
66 200 80
68 30 20
69 600 420
71 20 10
72 20 10
73 200 130
74 300 240
75 300 200
77 50 30
79 400 360
82 2000 1500
83 200 150
86 1200 950
87 300 180
89 400 360
90 2000 1300
91 200 140
92 500 360
93 100 30
94 400 360
"""

BW33_SWITCHES = (4, 10, 26, 33, 34, 35, 36, 37)
BW33_NORMALLY_OPEN = (33, 34, 35, 36, 37)
TPC94_SWITCHES = tuple(range(84, 98))

# Community solar sites (node label, nameplate kW) per DER distribution.
BW33_LAYOUTS = {
    "DD-U": ((4, 60), (7, 100), (12, 120), (14, 80), (19, 110),
             (23, 80), (21, 110), (26, 70), (29, 60), (32, 150)),
    "DD-I": ((2, 185), (4, 160), (7, 200), (19, 185), (23, 210)),
    "DD-II": ((12, 300), (14, 160), (15, 200), (16, 280)),
    "DD-III": ((29, 300), (30, 160), (31, 200), (32, 280)),
    "DD-II+III": ((12, 170), (14, 100), (15, 180), (29, 160), (31, 190), (32, 140)),
    "none": (),
}

# TPC-94 solar sites grouped by feeder: training layout and the "solar error" test layout.
TPC94_LAYOUTS = {
    "S1": {
        "A": ((5, 150), (8, 200), (10, 330)),
        "C": ((20, 585), (21, 340), (22, 750), (24, 400), (28, 350)),
        "D": ((40, 250),),
        "E": ((42, 450),),
        "F": ((43, 305), (45, 250), (46, 320)),
        "G": ((48, 240), (50, 120), (53, 430)),
        "I": ((65, 180), (69, 340), (70, 250)),
        "J": ((74, 250),),
    },
    "solar-error": {
        "A": ((3, 250), (6, 310), (8, 200), (9, 280)),
        "C": ((20, 585), (21, 380), (22, 750), (24, 450), (28, 350)),
        "D": ((29, 350),),
        "E": ((36, 250), (42, 450)),
        "F": ((43, 325), (45, 310), (46, 290)),
        "G": ((48, 240), (50, 120), (53, 430)),
        "I": ((65, 230), (69, 380), (70, 230)),
        "J": ((74, 250),),
        "K": ((78, 120), (81, 150)),
    },
    "none": {},
}

COMMERCIAL_KINDS = {1: "hospital", 2: "office", 3: "restaurant", 4: "retail", 5: "warehouse"}

# TPC-94 commercial load sites: feeder -> ((node label, kind code), ...)
TPC94_COMMERCIAL = {
    "A": ((13, 4), (16, 2), (17, 1)),
    "B": ((23, 2),),
    "C": ((28, 2), (30, 1), (34, 5), (35, 5)),
    "D": ((36, 5), (37, 4), (39, 1), (40, 2)),
    "E": ((42, 4), (47, 4), (52, 2)),
    "F": ((55, 3),),
    "G": ((61, 2),),
    "H": ((74, 2),),
    "I": ((77, 5), (82, 2)),
    "J": ((86, 3), (87, 2)),
    "K": ((90, 5), (93, 4)),
}


@dataclass(frozen=True)
class Layout:
    """Solar sites of one dataset: ``sites`` maps node label to nameplate kW."""

    name: str
    sites: tuple[tuple[int, float], ...]

    @property
    def total_kw(self) -> float:
        return float(sum(kw for _, kw in self.sites))


def _parse(table: str, cast=float):
    return [[cast(tok) for tok in row.split()] for row in table.strip().splitlines()]


def _build(name, line_table, load_table, switches, normally_open, n_nodes, base_kv, base_kva, v_lo, v_hi):
    z_base = base_kv**2 * 1000.0 / base_kva
    lines = []
    for no, a, b, r_ohm, x_ohm in _parse(line_table):
        lines.append(Line(int(no), int(a) - 1, int(b) - 1, r_ohm / z_base, x_ohm / z_base, int(no) in switches))
    p = [0.0] * n_nodes
    q = [0.0] * n_nodes
    for j, p_kw, q_kvar in _parse(load_table):
        p[int(j) - 1] = p_kw / base_kva
        q[int(j) - 1] = q_kvar / base_kva
    default_y = tuple(0 if s in normally_open else 1 for s in sorted(switches))
    return GridModel(
        name=name, node_count=n_nodes, lines=tuple(lines), pcc_node=0,
        base_kv=base_kv, base_kva=base_kva, v_lo=v_lo, v_hi=v_hi,
        node_labels=tuple(str(i + 1) for i in range(n_nodes)),
        nominal_p=tuple(p), nominal_q=tuple(q), default_y=default_y,
    )


def bw33() -> GridModel:
    """33-node feeder: 12.66 kV, 10 MVA base, lower voltage limit 0.87 pu."""
    return _build("bw33", BW33_LINES, BW33_LOADS, BW33_SWITCHES, BW33_NORMALLY_OPEN,
                  33, 12.66, 10_000.0, 0.87**2, 1.05**2)


def tpc94() -> GridModel:
    """94-node, 11-feeder network with 14 tie switches, 11.4 kV, 10 MVA base."""
    return _build("tpc94", TPC94_LINES, TPC94_LOADS, TPC94_SWITCHES, TPC94_SWITCHES,
                  94, 11.4, 10_000.0, 0.95**2, 1.05**2)


GRIDS = {"bw33": bw33, "tpc94": tpc94}


def load_named_grid(name: str) -> GridModel:
    try:
        return GRIDS[name]()
    except KeyError:
        raise KeyError(f"unknown grid {name!r}; choose from {sorted(GRIDS)}") from None


def solar_layout(grid_name: str, layout: str) -> Layout:
    if grid_name == "bw33" and layout in BW33_LAYOUTS:
        return Layout(layout, tuple((j, float(kw)) for j, kw in BW33_LAYOUTS[layout]))
    if grid_name == "tpc94" and layout in TPC94_LAYOUTS:
        sites = [(j, float(kw)) for feeder in TPC94_LAYOUTS[layout].values() for j, kw in feeder]
        return Layout(layout, tuple(sites))
    raise UnknownLayout(f"layout {layout!r} is not defined for grid {grid_name!r}")


def write_grid_csv(grid: GridModel, directory) -> tuple[Path, Path]:
    """Write ``lines.csv`` and ``nodes.csv`` in ohm / kW units."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    z_base = grid.base_kv**2 * 1000.0 / grid.base_kva
    lines_path, nodes_path = directory / "lines.csv", directory / "nodes.csv"
    with open(lines_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "from", "to", "R_ohm", "X_ohm", "is_switch"])
        for ln in grid.lines:
            w.writerow([ln.id, ln.from_node, ln.to_node, repr(ln.r * z_base), repr(ln.x * z_base), int(ln.is_switch)])
    with open(nodes_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "P_L_kW", "Q_L_kVAR"])
        for j in range(grid.node_count):
            w.writerow([j, repr(grid.nominal_p[j] * grid.base_kva), repr(grid.nominal_q[j] * grid.base_kva)])
    return lines_path, nodes_path


def load_grid_csv(lines_path, nodes_path, *, name="custom", base_kv=12.66, base_kva=10_000.0,
                  v_lo=0.95**2, v_hi=1.05**2, pcc_node=0, default_closed=None) -> GridModel:
    """Build a grid from the ``lines.csv`` / ``nodes.csv`` pair.

    Switches listed in ``default_closed`` (line ids) start closed; every other
    switch starts open.
    """
    z_base = base_kv**2 * 1000.0 / base_kva
    with open(lines_path, newline="") as fh:
        lines = [
            Line(int(r["id"]), int(r["from"]), int(r["to"]), float(r["R_ohm"]) / z_base,
                 float(r["X_ohm"]) / z_base, r["is_switch"].strip().lower() in ("1", "true", "yes"))
            for r in csv.DictReader(fh)
        ]
    with open(nodes_path, newline="") as fh:
        nodes = sorted(((int(r["id"]), float(r["P_L_kW"]), float(r["Q_L_kVAR"])) for r in csv.DictReader(fh)))
    n = len(nodes)
    if [j for j, _, _ in nodes] != list(range(n)):
        raise ValueError("nodes.csv ids must be 0..N-1")
    closed = set(default_closed or ())
    default_y = tuple(int(ln.id in closed) for ln in lines if ln.is_switch)
    return GridModel(
        name=name, node_count=n, lines=tuple(lines), pcc_node=pcc_node, base_kv=base_kv,
        base_kva=base_kva, v_lo=v_lo, v_hi=v_hi,
        nominal_p=tuple(p / base_kva for _, p, _ in nodes),
        nominal_q=tuple(q / base_kva for _, _, q in nodes), default_y=default_y,
    )
