import numpy as np
import pytest

from gridreconf.errors import UnknownLayout
from gridreconf.feeders import BW33_LAYOUTS, load_grid_csv, load_named_grid, solar_layout, write_grid_csv
from gridreconf.scenarios import solar_penetration


def test_bw33_per_unit_conversion(bw):
    # line 1 of the datasheet: 0.0922 + j0.0470 ohm on a 12.66 kV / 10 MVA base
    z_base = 12.66**2 * 1000 / 10_000
    assert bw.lines[0].r == pytest.approx(0.0922 / z_base)
    assert bw.lines[0].x == pytest.approx(0.0470 / z_base)
    assert sum(bw.nominal_p) * bw.base_kva == pytest.approx(3715.0)
    assert sum(bw.nominal_q) * bw.base_kva == pytest.approx(2300.0)


def test_bw33_voltage_limits(bw):
    assert bw.v_lo == pytest.approx(0.87**2)
    assert bw.v_hi == pytest.approx(1.05**2)


def test_bw33_penetration(bw):
    for layout in BW33_LAYOUTS:
        if layout != "none":
            assert solar_penetration(bw, layout) == pytest.approx(0.253, abs=0.005)


def test_unknown_layout():
    with pytest.raises(UnknownLayout):
        solar_layout("bw33", "S1")
    with pytest.raises(KeyError):
        load_named_grid("ieee13")


def test_grid_csv_round_trip(bw, tmp_path):
    lines, nodes = write_grid_csv(bw, tmp_path)
    closed = [bw.switch_ids[k] for k, v in enumerate(bw.default_y) if v]
    g = load_grid_csv(lines, nodes, name="bw33", v_lo=bw.v_lo, default_closed=closed)
    np.testing.assert_allclose(g.r, bw.r, rtol=1e-15)
    np.testing.assert_allclose(g.x, bw.x, rtol=1e-15)
    np.testing.assert_allclose(g.nominal_p, bw.nominal_p, rtol=1e-15)
    assert g.switch_ids == bw.switch_ids and g.default_y == bw.default_y


def test_tpc94_default_topology_not_spanning(tpc):
    from gridreconf.grid import is_radial

    assert not is_radial(tpc, np.array(tpc.default_y))
