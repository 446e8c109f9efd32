import numpy as np
import pytest

from gridreconf.constraints import (INEQ_CLASSES, equality_residuals, inequality_labels, inequality_values,
                                    integrality_gaps, pcc_inflow)
from gridreconf.grid import PowerState, TopologyState, radial_topology


def _bounds(grid, pmax=1.0):
    n = grid.node_count
    return np.zeros(n), np.full(n, pmax), np.full(n, -pmax), np.full(n, pmax)


def test_labels_align_with_values(six):
    topo = radial_topology(six, np.array([1.0, 0.0, 1.0]))
    st = PowerState.zeros(six)
    h = inequality_values(six, topo, st, _bounds(six), no_export=True)
    labels = inequality_labels(six, True)
    assert len(labels) == h.shape[-1]
    assert {c for c, _ in labels} <= set(INEQ_CLASSES)


def test_flat_state_is_feasible(six):
    topo = radial_topology(six, np.array([1.0, 0.0, 1.0]))
    h = inequality_values(six, topo, PowerState.zeros(six), _bounds(six))
    assert h.max() <= 0.0


def test_big_m_relaxes_open_switch(six):
    y = np.array([1.0, 0.0, 1.0])
    topo = radial_topology(six, y)
    st = PowerState.zeros(six)
    st.v[4] = 0.95  # voltage step across the open switch 3-4 and the closed ones
    h = inequality_values(six, topo, st, _bounds(six))
    labels = inequality_labels(six, False)
    by_id = {name: h[i] for i, (_, name) in enumerate(labels)}
    assert by_id["ohm_upper[5]"] < 0 and by_id["ohm_lower[5]"] < 0  # open
    assert max(by_id["ohm_upper[4]"], by_id["ohm_lower[4]"]) > 0  # closed, drop unexplained


def test_flow_on_open_line_violates(six):
    topo = radial_topology(six, np.array([1.0, 0.0, 1.0]))
    st = PowerState.zeros(six)
    st.p_ij[4] = 0.5
    h = inequality_values(six, topo, st, _bounds(six), big_m=0.1)
    labels = inequality_labels(six, False)
    viol = {labels[i][1] for i in np.flatnonzero(h > 0)}
    assert "P_ij_cap[5]" in viol


def test_generator_limits(six):
    topo = radial_topology(six, np.array([1.0, 0.0, 1.0]))
    st = PowerState.zeros(six)
    st.p_gen[2] = 2.0
    st.q_gen[3] = -2.0
    h = inequality_values(six, topo, st, _bounds(six))
    labels = inequality_labels(six, False)
    viol = {labels[i][1] for i in np.flatnonzero(h > 0)}
    assert viol == {"P_G_max[2]", "Q_G_min[3]"}


def test_no_export_rows(six):
    assert [k for k, _ in pcc_inflow(six)] == [0, 2]
    topo = TopologyState(np.array([1.0, 0.0, 1.0]), np.array([0.0, 1, 1, 1, 0, 1]), np.array([1.0, 0, 0, 0, 0, 0]))
    st = PowerState.zeros(six)
    st.p_ji[0] = 0.1
    h = inequality_values(six, topo, st, _bounds(six), no_export=True)
    labels = inequality_labels(six, True)
    viol = {labels[i][1] for i in np.flatnonzero(h > 0)}
    assert viol == {"z_into_pcc[1]", "P_into_pcc[1]"}


def test_equality_families(six):
    topo = radial_topology(six, np.array([1.0, 0.0, 1.0]))
    eq = equality_residuals(six, topo, PowerState.zeros(six))
    assert set(eq) == {"p-balance", "q-balance", "ohm", "direction-line", "direction-switch", "radiality",
                       "slack-voltage"}
    assert all(np.abs(v).max() == 0 for v in eq.values())
    bad = TopologyState(np.array([1.0, 1.0, 1.0]), topo.z_ij, topo.z_ji)
    assert equality_residuals(six, bad, PowerState.zeros(six))["radiality"][0] == pytest.approx(1.0)


def test_integrality_gaps():
    topo = TopologyState(np.array([0.2, 1.0]), np.array([0.5]), np.array([0.9]))
    gaps = integrality_gaps(topo)
    np.testing.assert_allclose(gaps["y"], [0.2, 0.0])
    np.testing.assert_allclose(gaps["z_ij"], [0.5])
    np.testing.assert_allclose(gaps["z_ji"], [0.1])
