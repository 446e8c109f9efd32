import copy
import dataclasses

import cvxpy as cp
import numpy as np
import pytest

from gridreconf.completion import IndexMap
from gridreconf.errors import AllInfeasible, Infeasible, TooManyTopologies
from gridreconf.grid import GridModel, Line, is_radial, tree_order
from gridreconf.oracle import (DispatchCache, WarmStart, brute_force_optimum, candidate_count, check_feasibility,
                               enumerate_radial, export_warmstart, label_dataset, psi_names, read_labels_csv,
                               solve_fixed_topology, write_labels_csv)
from gridreconf.scenarios import DatasetSpec, build_dataset

from helpers import grid_search_oracle, six_node_dataset

# frozen once from the enumeration and kept as regression constants
BW33_CANDIDATES, BW33_RADIAL = 56, 35
TPC94_CANDIDATES, TPC94_RADIAL = 1001, 27


@pytest.fixture(scope="module")
def bw_data(bw):
    return build_dataset(DatasetSpec(count=24, seed=3), bw)


def test_enumeration_constants(bw, tpc):
    assert candidate_count(bw) == BW33_CANDIDATES
    assert len(enumerate_radial(bw)) == BW33_RADIAL
    assert candidate_count(tpc) == TPC94_CANDIDATES
    assert len(enumerate_radial(tpc)) == TPC94_RADIAL


def test_enumeration_order_and_radiality(six):
    topos = enumerate_radial(six)
    assert [t.closed_switch_ids(six) for t in topos] == [(4, 6), (5, 6)]
    assert all(is_radial(six, t.y) for t in topos)


def test_too_many_topologies(monkeypatch, tpc):
    import gridreconf.oracle as oracle

    monkeypatch.setattr(oracle, "MAX_CANDIDATES", 100)
    with pytest.raises(TooManyTopologies):
        enumerate_radial(tpc)


def test_matches_grid_search_on_six_node(six):
    data = six_node_dataset(8, 21, six)
    for scen in data:
        ref, ids = grid_search_oracle(six, scen)
        sol = brute_force_optimum(six, scen)
        assert sol.objective <= ref + 1e-12
        assert ref - sol.objective <= 1e-4
        assert check_feasibility(six, scen, sol.decision, eps=1e-6).empty


def _cvx_dispatch(grid, scen, y, signs=None):
    """Independent convex model on a fixed tree; optional per-line flow signs."""
    order, parent, down = tree_order(grid, y)
    n = grid.node_count
    kids = [j for j in order if j != grid.pcc_node]
    P = cp.Variable(n)
    Q = cp.Variable(n)
    pg = cp.Variable(n)
    qg = cp.Variable(n)
    v = cp.Variable(n)
    cons = [v[grid.pcc_node] == 1, v[kids] >= grid.v_lo, v[kids] <= grid.v_hi,
            pg >= scen.p_gen_min, pg <= scen.p_gen_max, qg >= scen.q_gen_min, qg <= scen.q_gen_max]
    children = {j: [] for j in range(n)}
    for j in kids:
        k = parent[j]
        a = grid.from_idx[k] if down[k] else grid.to_idx[k]
        children[a].append(j)
        cons.append(v[j] == v[a] - 2 * (grid.r[k] * P[j] + grid.x[k] * Q[j]))
    for j in range(n):
        inflow_p = P[j] if j != grid.pcc_node else 0
        inflow_q = Q[j] if j != grid.pcc_node else 0
        cons.append(inflow_p + pg[j] == scen.p_load[j] + sum(P[c] for c in children[j]))
        cons.append(inflow_q + qg[j] == scen.q_load[j] + sum(Q[c] for c in children[j]))
    if signs is not None:
        for j in kids:
            cons += [signs[j] * P[j] >= 0, signs[j] * Q[j] >= 0]
    r = np.array([grid.r[parent[j]] if j in kids else 0.0 for j in range(n)])
    prob = cp.Problem(cp.Minimize(cp.sum(cp.multiply(r, cp.square(P) + cp.square(Q)))), cons)
    prob.solve(solver=cp.CLARABEL)
    return prob


def test_fixed_topology_against_cvxpy(bw, bw_data):
    cache = DispatchCache(bw)
    checked = 0
    for scen in list(bw_data)[:6]:
        for topo in enumerate_radial(bw)[:: 7]:
            sol = cache.solve(scen, topo.y)
            relax = _cvx_dispatch(bw, scen, topo.y)
            if not sol.ok:
                assert relax.status in ("infeasible", "infeasible_inaccurate") or sol.status == "infeasible"
                continue
            # the relaxation drops the P/Q direction agreement, so it bounds from below
            assert relax.value <= sol.objective + 1e-8
            order, parent, down = tree_order(bw, topo.y)
            signs = np.zeros(bw.node_count)
            for j in order[1:]:
                k = parent[j]
                fwd = sol.state.p_ij[k] + sol.state.q_ij[k] - sol.state.p_ji[k] - sol.state.q_ji[k]
                signs[j] = (1.0 if fwd >= 0 else -1.0) * (1.0 if down[k] else -1.0)
            fixed = _cvx_dispatch(bw, scen, topo.y, signs)
            assert fixed.value == pytest.approx(sol.objective, rel=1e-6, abs=1e-9)
            checked += 1
    assert checked > 5


def test_oracle_solutions_are_certified(bw, bw_data):
    for scen in list(bw_data)[:5]:
        sol = brute_force_optimum(bw, scen)
        rep = check_feasibility(bw, scen, sol.decision, eps=1e-6)
        assert rep.empty, rep.entries
        assert rep.equality_max <= 1e-9 and rep.integrality_max == 0.0


def test_directions_follow_flow(bw, bw_data):
    sol = brute_force_optimum(bw, bw_data[0])
    st, t = sol.state, sol.topology
    assert np.all(st.p_ij[t.z_ij == 0] == 0) and np.all(st.p_ji[t.z_ji == 0] == 0)
    np.testing.assert_array_equal(t.z_ij + t.z_ji, bw.closed_lines(t.y).astype(float))


def test_tie_break_lexicographic(six):
    # no load anywhere and no generation: every topology costs zero
    data = six_node_dataset(1, 0, six)
    data.p_load[:] = 0.0
    data.q_load[:] = 0.0
    data.p_gen_max[:, 1:] = 0.0
    data.q_gen_max[:, 1:] = 0.0
    data.q_gen_min[:, 1:] = 0.0
    sol = brute_force_optimum(six, data[0])
    assert sol.topology.closed_switch_ids(six) == (4, 6)


def test_infeasible_topology_reported(six):
    data = six_node_dataset(1, 0, six)
    scen = data[0]
    scen.p_load = scen.p_load * 200.0
    with pytest.raises(Infeasible):
        solve_fixed_topology(six, scen, enumerate_radial(six)[0])
    with pytest.raises(AllInfeasible):
        brute_force_optimum(six, scen)


def test_voltage_floor_relaxation(six):
    tight = dataclasses.replace(six, v_lo=0.999**2)
    scen = six_node_dataset(1, 0, tight)[0]
    cache = DispatchCache(tight)
    y = enumerate_radial(tight)[0].y
    strict = cache.solve(scen, y)
    relaxed = cache.solve(scen, y, v_floor=0.0)
    assert not strict.ok and relaxed.ok


def test_warmstart_omits_single_violated_voltage(bw, bw_data):
    scen = bw_data[2]
    sol = brute_force_optimum(bw, scen)
    touching = {int(bw.from_idx[k]) for k in bw.switch_lines} | {int(bw.to_idx[k]) for k in bw.switch_lines}
    j = next(j for j in bw.non_pcc if int(j) not in touching)
    psi = copy.deepcopy(sol.decision)
    psi.state.v[j] = bw.v_hi + 0.01
    ws = export_warmstart(bw, scen, psi)
    assert ws.omitted == (f"V[{j}]",)
    clean = export_warmstart(bw, scen, sol.decision)
    assert clean.omitted == ()
    assert clean.values[f"V[{j}]"] == pytest.approx(np.sqrt(sol.state.v[j]))
    assert WarmStart.from_text(ws.to_text()) == ws


def test_warmstart_names_are_unique(bw):
    names = [n for n in psi_names(bw, IndexMap(bw)) if n is not None]
    assert len(names) == len(set(names))
    assert {n.split("[")[0] for n in names} == {"y", "z_ij", "z_ji", "V", "P_G", "Q_G"}


def test_labels_csv_round_trip(six, tmp_path):
    data = six_node_dataset(5, 2, six)
    labels = label_dataset(six, data)
    back = read_labels_csv(six, write_labels_csv(six, labels, tmp_path / "labels.csv"))
    for name in ("timestamps", "y", "objective", "v", "p_gen", "q_gen"):
        np.testing.assert_array_equal(getattr(back, name), getattr(labels, name))
    sub = labels.subset_by_timestamp([3, 1])
    np.testing.assert_array_equal(sub.objective, labels.objective[[3, 1]])
