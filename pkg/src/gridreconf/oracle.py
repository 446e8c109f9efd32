"""Exact desk-scale oracle: topology enumeration and fixed-tree dispatch.

On a fixed radial tree every line flow is a subtree sum of net injections
and every voltage is linear in the flows, so the dispatch subproblem
reduces to a small strictly convex QP over the non-PCC generator outputs.
The PCC absorbs the balance as slack.

The directed flow variables share one direction indicator per line, so a
line may not carry real and reactive power in opposite directions. When
the relaxed QP does that, a small branch-and-bound over the sign of the
offending lines restores consistency without losing optimality.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .completion import CompletionModel, DecisionVector, IndexMap
from .constraints import DEFAULT_BIG_M, INEQ_CLASSES, equality_residuals, integrality_gaps
from .errors import AllInfeasible, Infeasible, MaxIter, TooManyTopologies
from .grid import GridModel, PowerState, TopologyState, cutoff_L, is_radial, objective_f, tree_order
from .qp import solve_qp

MAX_CANDIDATES = 10**6
KKT_TOL = 1e-6
SIGN_TOL = 1e-9
MAX_BRANCH_NODES = 4096


@dataclass
class FixedTopologySolution:
    topology: TopologyState
    state: PowerState
    objective: float
    kkt_residual: float
    status: str

    @property
    def ok(self) -> bool:
        return self.status == "optimal"

    @property
    def decision(self) -> DecisionVector:
        return DecisionVector(self.topology, self.state)


def _bounds(scenario):
    return scenario.p_gen_min, scenario.p_gen_max, scenario.q_gen_min, scenario.q_gen_max


def enumerate_radial(grid: GridModel) -> list[TopologyState]:
    """Every radial switch configuration, ordered by closed-switch ids."""
    from .grid import radial_topology

    L = cutoff_L(grid)
    s = grid.n_switches
    if math.comb(s, L) > MAX_CANDIDATES:
        raise TooManyTopologies(f"C({s}, {L}) candidate subsets exceed {MAX_CANDIDATES}")
    out = []
    for closed in itertools.combinations(range(s), L):
        y = np.zeros(s)
        y[list(closed)] = 1.0
        if is_radial(grid, y):
            out.append(radial_topology(grid, y))
    out.sort(key=lambda t: t.closed_switch_ids(grid))
    return out


def candidate_count(grid: GridModel) -> int:
    return math.comb(grid.n_switches, cutoff_L(grid))


class TreeDispatch:
    """Reduced dispatch QP for one radial topology and one generator set.

    Edges are indexed by their child node. With ``F`` the flow from parent
    to child, ``F = b - A x`` where ``b`` are subtree loads and ``x`` the
    non-PCC generator outputs.
    """

    def __init__(self, grid: GridModel, y, gen_nodes):
        y = np.asarray(y, dtype=float)
        if not is_radial(grid, y):
            raise Infeasible("topology is not radial")
        self.grid = grid
        self.y = y
        order, parent_line, downstream = tree_order(grid, y)
        n = grid.node_count
        pcc = grid.pcc_node
        self.gen = np.array([j for j in gen_nodes if j != pcc], dtype=int)
        self.parent_line = parent_line
        self.downstream = downstream
        sub = np.eye(n)
        for node in order[:0:-1]:
            k = parent_line[node]
            parent = grid.from_idx[k] if downstream[k] else grid.to_idx[k]
            sub[parent] += sub[node]
        self.children = np.array([j for j in order if j != pcc], dtype=int)
        self.edge_line = parent_line[self.children]
        self.S = sub[self.children]
        self.A = self.S[:, self.gen]
        self.R = grid.r[self.edge_line]
        self.X = grid.x[self.edge_line]
        ra = self.R[:, None] * self.A
        hp = 2.0 * self.A.T @ ra
        ng = len(self.gen)
        self.H = np.zeros((2 * ng, 2 * ng))
        self.H[:ng, :ng] = hp
        self.H[ng:, ng:] = hp
        self._hess: dict = {}
        # row keys active at the last solve, used to warm start the next one
        self._warm: frozenset = frozenset()
        # v = v_const + V x
        self.V = 2.0 * self.S.T @ np.hstack([ra, self.X[:, None] * self.A])
        self.from_pcc = np.array([
            (grid.from_idx[k] == pcc) or (grid.to_idx[k] == pcc) for k in self.edge_line
        ])

    def _qp_data(self, scenario, no_export, v_lo):
        g = self.grid
        ng = len(self.gen)
        bp = self.S @ scenario.p_load
        bq = self.S @ scenario.q_load
        c = -2.0 * np.concatenate([self.A.T @ (self.R * bp), self.A.T @ (self.R * bq)])
        const = float(np.sum(self.R * (bp**2 + bq**2)))
        v_const = 1.0 - 2.0 * self.S.T @ (self.R * bp + self.X * bq)
        pcc = g.pcc_node
        eye = np.eye(2 * ng)
        ones_p = np.concatenate([np.ones(ng), np.zeros(ng)])
        ones_q = np.concatenate([np.zeros(ng), np.ones(ng)])
        p_tot = float(np.sum(scenario.p_load))
        q_tot = float(np.sum(scenario.q_load))
        lo = np.concatenate([scenario.p_gen_min[self.gen], scenario.q_gen_min[self.gen]])
        hi = np.concatenate([scenario.p_gen_max[self.gen], scenario.q_gen_max[self.gen]])
        rows = [eye, -eye, -ones_p[None], ones_p[None], -ones_q[None], ones_q[None]]
        rhs = [
            hi, -lo,
            [scenario.p_gen_max[pcc] - p_tot], [p_tot - scenario.p_gen_min[pcc]],
            [scenario.q_gen_max[pcc] - q_tot], [q_tot - scenario.q_gen_min[pcc]],
        ]
        vn = g.non_pcc
        rows += [self.V[vn], -self.V[vn]]
        rhs += [g.v_hi - v_const[vn], v_const[vn] - v_lo]
        G = np.vstack(rows)
        h = np.concatenate([np.atleast_1d(np.asarray(r, dtype=float)) for r in rhs])
        forced = {int(e): 1.0 for e in np.flatnonzero(self.from_pcc)} if no_export else {}
        return c, const, G, h, bp, bq, v_const, lo, hi, forced

    def _sign_rows(self, signs, bp, bq):
        """Rows for ``s * F_e >= 0`` on each signed edge ``e``: ``s * A_e x <= s * b_e``."""
        ng = len(self.gen)
        if not signs:
            return np.zeros((0, 2 * ng)), np.zeros(0)
        rows, rhs = [], []
        for e, s in sorted(signs.items()):
            rp = np.zeros(2 * ng)
            rq = np.zeros(2 * ng)
            rp[:ng] = s * self.A[e]
            rq[ng:] = s * self.A[e]
            rows += [rp, rq]
            rhs += [s * bp[e], s * bq[e]]
        return np.array(rows).reshape(-1, 2 * ng), np.array(rhs, dtype=float)

    def _reduced_hessian(self, free: np.ndarray):
        key = free.tobytes()
        if key not in self._hess:
            hf = self.H[np.ix_(free, free)]
            if len(hf):
                l_inv = np.linalg.inv(np.linalg.cholesky(hf))
                self._hess[key] = (hf, l_inv.T @ l_inv)
            else:
                self._hess[key] = (hf, hf)
        return self._hess[key]

    def solve(self, scenario, no_export: bool = False, v_floor: float | None = None) -> FixedTopologySolution:
        """Optimal dispatch; ``v_floor`` replaces the grid's lower voltage limit when given."""
        g = self.grid
        ng = len(self.gen)
        v_lo = g.v_lo if v_floor is None else v_floor
        c, const, G0, h0, bp, bq, v_const, lo, hi, forced = self._qp_data(scenario, no_export, v_lo)
        infeasible = FixedTopologySolution(
            TopologyState(self.y, np.zeros(g.n_lines), np.zeros(g.n_lines)),
            PowerState.zeros(g), np.inf, np.inf, "infeasible")
        # voltage screen over the generator box alone
        vn = g.non_pcc
        vx = self.V[vn]
        spread = np.maximum(vx * lo, vx * hi).sum(axis=1), np.minimum(vx * lo, vx * hi).sum(axis=1)
        if np.any(v_const[vn] + spread[0] < v_lo - 1e-12) or np.any(v_const[vn] + spread[1] > g.v_hi + 1e-12):
            return infeasible
        if np.any(lo > hi):
            return infeasible
        pinned = hi - lo <= 1e-12
        free = ~pinned
        x_pin = np.where(pinned, lo, 0.0)
        hf, hf_inv = self._reduced_hessian(free)
        c_f = c[free] + self.H[np.ix_(free, pinned)] @ x_pin[pinned]

        best = None
        best_obj = np.inf
        worst_kkt = 0.0
        status = "infeasible"
        stack: list[dict[int, float]] = [dict(forced)]
        nodes = 0
        while stack:
            nodes += 1
            if nodes > MAX_BRANCH_NODES:
                status = "max_iter"
                break
            signs = stack.pop()
            gs, hs = self._sign_rows(signs, bp, bq)
            G = np.vstack([G0, gs])
            h = np.concatenate([h0, hs]) - G[:, pinned] @ x_pin[pinned]
            G = G[:, free]
            keys = list(range(len(G0))) + [("sign", e, part) for e in sorted(signs) for part in (0, 1)]
            empty = ~np.any(G != 0.0, axis=1)
            if np.any(h[empty] < -1e-9 * (1.0 + np.abs(h[empty]))):
                continue
            G, h = G[~empty], h[~empty]
            keys = [kk for kk, e in zip(keys, empty) if not e]
            x = x_pin.copy()
            kkt = 0.0
            if free.any():
                warm = [i for i, kk in enumerate(keys) if kk in self._warm]
                res = solve_qp(hf, c_f, G, h, h_inv=hf_inv, warm=warm)
                if res.status == "max_iter":
                    status = "max_iter"
                    break
                if not res.ok:
                    continue
                x[free] = res.x
                kkt = res.kkt_residual
                self._warm = frozenset(keys[i] for i in res.active)
            obj = 0.5 * x @ self.H @ x + c @ x + const
            if obj >= best_obj - 1e-14 * (1.0 + abs(best_obj)):
                continue
            fp = bp - self.A @ x[:ng]
            fq = bq - self.A @ x[ng:]
            clash = (fp * fq < 0) & (np.minimum(np.abs(fp), np.abs(fq)) > SIGN_TOL)
            if clash.any():
                e = int(np.argmax(np.where(clash, np.minimum(np.abs(fp), np.abs(fq)), -1.0)))
                # explore the sign of the larger component first
                first = 1.0 if (fp[e] if abs(fp[e]) >= abs(fq[e]) else fq[e]) > 0 else -1.0
                stack.append({**signs, e: -first})
                stack.append({**signs, e: first})
                continue
            best, best_obj, worst_kkt = (x, fp, fq), obj, kkt
        if best is None:
            infeasible.status = status
            return infeasible
        x, fp, fq = best
        return self._solution(scenario, x, fp, fq, worst_kkt)

    def _solution(self, scenario, x, fp, fq, kkt) -> FixedTopologySolution:
        g = self.grid
        n, m = g.node_count, g.n_lines
        ng = len(self.gen)
        orient = np.where(self.downstream[self.edge_line], 1.0, -1.0)
        fl_p = orient * fp
        fl_q = orient * fq
        st = PowerState.zeros(g)
        st.p_load = np.array(scenario.p_load, dtype=float)
        st.q_load = np.array(scenario.q_load, dtype=float)
        k = self.edge_line
        st.p_ij[k] = np.maximum(fl_p, 0.0)
        st.p_ji[k] = np.maximum(-fl_p, 0.0)
        st.q_ij[k] = np.maximum(fl_q, 0.0)
        st.q_ji[k] = np.maximum(-fl_q, 0.0)
        pg = np.zeros(n)
        qg = np.zeros(n)
        pg[self.gen] = x[:ng]
        qg[self.gen] = x[ng:]
        pg[g.pcc_node] += st.p_load.sum() - pg.sum()
        qg[g.pcc_node] += st.q_load.sum() - qg.sum()
        st.p_gen, st.q_gen = pg, qg
        st.v = 1.0 - 2.0 * self.S.T @ (self.R * fp + self.X * fq)
        st.v[g.pcc_node] = 1.0
        # direction follows the dominant flow; idle lines point away from the PCC
        lead = np.where(np.abs(fp) >= np.abs(fq), fp, fq)
        away = np.where(np.abs(lead) > SIGN_TOL, np.sign(lead), 1.0)
        along = away * orient > 0
        z_ij = np.zeros(m)
        z_ji = np.zeros(m)
        z_ij[k] = along
        z_ji[k] = ~along
        topo = TopologyState(self.y.copy(), z_ij, z_ji)
        status = "optimal" if kkt <= KKT_TOL else "max_iter"
        return FixedTopologySolution(topo, st, float(objective_f(g, st)), float(kkt), status)


def _gen_nodes(scenario) -> tuple[int, ...]:
    nz = (scenario.p_gen_max > 0) | (scenario.p_gen_min < 0) | (scenario.q_gen_max > 0) | (scenario.q_gen_min < 0)
    return tuple(int(j) for j in np.flatnonzero(nz))


class DispatchCache:
    """Reuses per-topology QP structure across scenarios."""

    def __init__(self, grid: GridModel):
        self.grid = grid
        self._models: dict = {}

    def model(self, y, gen_nodes) -> TreeDispatch:
        key = (tuple(int(v > 0.5) for v in np.asarray(y)), tuple(gen_nodes))
        if key not in self._models:
            self._models[key] = TreeDispatch(self.grid, y, gen_nodes)
        return self._models[key]

    def solve(self, scenario, y, no_export=False, v_floor=None) -> FixedTopologySolution:
        return self.model(y, _gen_nodes(scenario)).solve(scenario, no_export, v_floor)


def solve_fixed_topology(grid: GridModel, scenario, topology, no_export: bool = False,
                         cache: DispatchCache | None = None, raise_on_fail: bool = True) -> FixedTopologySolution:
    """Optimal dispatch on a fixed radial topology."""
    y = topology.y if isinstance(topology, TopologyState) else topology
    cache = cache or DispatchCache(grid)
    sol = cache.solve(scenario, y, no_export)
    if raise_on_fail and sol.status == "infeasible":
        raise Infeasible("no dispatch meets the loads within limits on this topology")
    if raise_on_fail and sol.status == "max_iter":
        raise MaxIter("fixed-topology dispatch did not converge")
    return sol


def brute_force_optimum(grid: GridModel, scenario, no_export: bool = False, topologies=None,
                        cache: DispatchCache | None = None) -> FixedTopologySolution:
    """Best radial topology with its optimal dispatch.

    Ties go to the lexicographically smallest set of closed switch ids.
    """
    topologies = enumerate_radial(grid) if topologies is None else topologies
    cache = cache or DispatchCache(grid)
    best = None
    for topo in sorted(topologies, key=lambda t: t.closed_switch_ids(grid)):
        sol = solve_fixed_topology(grid, scenario, topo, no_export, cache, raise_on_fail=False)
        if not sol.ok:
            continue
        if best is None or sol.objective < best.objective - 1e-12 * (1.0 + abs(best.objective)):
            best = sol
    if best is None:
        raise AllInfeasible("every radial topology is infeasible for this scenario")
    return best


@dataclass
class Violation:
    constraint_id: str
    cls: str
    magnitude: float


@dataclass
class ViolationReport:
    """Constraint violations of one decision vector.

    ``entries`` lists every row above ``eps``. Summary statistics cover the
    inequality rows only; equality and integrality gaps are kept apart.
    """

    entries: list[Violation]
    mean_violation: float
    max_violation: float
    count_above_eps: int
    eps: float
    class_max: dict[str, float] = field(default_factory=dict)
    equality_max: float = 0.0
    integrality_max: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.entries

    def by_class(self, cls: str) -> list[Violation]:
        return [e for e in self.entries if e.cls == cls]


def violation_summary(h, eps: float):
    """Per-instance (mean, max, count above eps) of the hinge of ``h``."""
    hinge = np.maximum(np.asarray(h, dtype=float), 0.0)
    return hinge.mean(axis=-1), hinge.max(axis=-1), (hinge > eps).sum(axis=-1)


def check_feasibility(grid: GridModel, scenario, psi: DecisionVector, big_m: float = DEFAULT_BIG_M,
                      eps: float = 1e-3, no_export: bool = False,
                      model: CompletionModel | None = None) -> ViolationReport:
    model = model or CompletionModel(grid, big_m, no_export)
    h = model.inequalities(psi, _bounds(scenario))
    hinge = np.maximum(h, 0.0)
    entries = [Violation(cid, cls, float(hinge[i])) for i, (cls, cid) in enumerate(model.labels) if hinge[i] > eps]
    class_max = {c: 0.0 for c in INEQ_CLASSES if c != "no-export" or no_export}
    for i, (cls, _) in enumerate(model.labels):
        class_max[cls] = max(class_max[cls], float(hinge[i]))
    eq_max = 0.0
    for fam, res in equality_residuals(grid, psi.topology, psi.state).items():
        for i, r in enumerate(np.atleast_1d(res)):
            eq_max = max(eq_max, abs(float(r)))
            if abs(r) > eps:
                entries.append(Violation(f"{fam}[{i}]", "equality", abs(float(r))))
    int_max = 0.0
    for name, gap in integrality_gaps(psi.topology).items():
        for i, r in enumerate(np.atleast_1d(gap)):
            int_max = max(int_max, float(r))
            if r > eps:
                entries.append(Violation(f"{name}[{i}]", "integrality", float(r)))
    return ViolationReport(entries, float(hinge.mean()), float(hinge.max(initial=0.0)),
                           int((hinge > eps).sum()), eps, class_max, eq_max, int_max)


# warm start ---------------------------------------------------------------

def psi_names(grid: GridModel, imap: IndexMap) -> list[str | None]:
    """Warm-start variable name for each flat ``psi`` entry (None if not exported)."""
    names: list[str | None] = [None] * imap.n_psi
    zs, ps = imap.z_slices, {k: slice(v.start + imap.n_z, v.stop + imap.n_z) for k, v in imap.phi_slices.items()}
    line_ids = [ln.id for ln in grid.lines]
    for pos, k in zip(range(zs["y"].start, zs["y"].stop), grid.switch_lines):
        names[pos] = f"y[{line_ids[k]}]"
    for pos, k in zip(range(zs["z_ji"].start, zs["z_ji"].stop), range(grid.n_lines)):
        names[pos] = f"z_ji[{line_ids[k]}]"
    for pos, k in zip(range(ps["z_ij"].start, ps["z_ij"].stop), range(grid.n_lines)):
        names[pos] = f"z_ij[{line_ids[k]}]"
    for pos, j in zip(range(zs["v"].start, zs["v"].stop), grid.non_pcc):
        names[pos] = f"V[{j}]"
    for pos, j in zip(range(ps["p_gen"].start, ps["p_gen"].stop), range(grid.node_count)):
        names[pos] = f"P_G[{j}]"
    for pos, j in zip(range(ps["q_gen"].start, ps["q_gen"].stop), range(grid.node_count)):
        names[pos] = f"Q_G[{j}]"
    return names


@dataclass
class WarmStart:
    values: dict[str, float]
    omitted: tuple[str, ...] = ()

    def to_text(self) -> str:
        lines = [f"{k}={v!r}" for k, v in self.values.items()]
        lines.append("omitted=" + ",".join(self.omitted))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "WarmStart":
        values: dict[str, float] = {}
        omitted: tuple[str, ...] = ()
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            if key == "omitted":
                omitted = tuple(x for x in val.split(",") if x)
            else:
                values[key] = float(val)
        return cls(values, omitted)

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_text())
        return path

    @classmethod
    def read(cls, path) -> "WarmStart":
        return cls.from_text(Path(path).read_text())


def export_warmstart(grid: GridModel, scenario, psi: DecisionVector, big_m: float = DEFAULT_BIG_M,
                     eps: float = 1e-6, no_export: bool = False) -> WarmStart:
    """Generator outputs, voltage magnitudes and binaries, minus anything in a violated inequality."""
    model = CompletionModel(grid, big_m, no_export)
    imap = model.imap
    z, phi = imap.flatten(psi)
    flat = np.concatenate([z, phi])
    names = psi_names(grid, imap)
    h = model.inequalities(psi, _bounds(scenario))
    bad = set()
    jac = model.penalty_jacobian
    for row in np.flatnonzero(h > eps):
        for col in np.flatnonzero(jac[row]):
            if names[col] is not None:
                bad.add(names[col])
    values: dict[str, float] = {}
    omitted = []
    for pos, name in enumerate(names):
        if name is None:
            continue
        val = float(flat[pos])
        if name.startswith("V["):
            val = math.sqrt(max(val, 0.0))
        if name in bad:
            omitted.append(name)
        else:
            values[name] = val
    return WarmStart(values, tuple(omitted))


# labels ---------------------------------------------------------------------

@dataclass
class LabelSet:
    timestamps: np.ndarray
    y: np.ndarray
    objective: np.ndarray
    v: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray

    def subset_by_timestamp(self, timestamps) -> "LabelSet":
        pos = {int(t): i for i, t in enumerate(self.timestamps)}
        idx = np.array([pos[int(t)] for t in timestamps], dtype=int)
        return LabelSet(self.timestamps[idx], self.y[idx], self.objective[idx], self.v[idx],
                        self.p_gen[idx], self.q_gen[idx])


def label_dataset(grid: GridModel, data, no_export: bool = False, progress=None) -> LabelSet:
    topologies = enumerate_radial(grid)
    cache = DispatchCache(grid)
    ys, objs, vs, pgs, qgs = [], [], [], [], []
    for i, scen in enumerate(data):
        sol = brute_force_optimum(grid, scen, no_export, topologies, cache)
        ys.append(sol.topology.y)
        objs.append(sol.objective)
        vs.append(sol.state.v)
        pgs.append(sol.state.p_gen)
        qgs.append(sol.state.q_gen)
        if progress:
            progress(i)
    return LabelSet(np.array(data.timestamps), np.array(ys), np.array(objs), np.array(vs), np.array(pgs), np.array(qgs))


def write_labels_csv(grid: GridModel, labels: LabelSet, path) -> Path:
    path = Path(path)
    n = grid.node_count
    header = ["timestamp", "closed_switches", "objective"]
    header += [f"v_{j}" for j in range(n)] + [f"P_G_{j}" for j in range(n)] + [f"Q_G_{j}" for j in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(labels.timestamps)):
            closed = [str(grid.switch_ids[k]) for k in np.flatnonzero(labels.y[i] > 0.5)]
            row = [int(labels.timestamps[i]), ";".join(closed), repr(float(labels.objective[i]))]
            row += [repr(float(a)) for a in (*labels.v[i], *labels.p_gen[i], *labels.q_gen[i])]
            w.writerow(row)
    return path


def read_labels_csv(grid: GridModel, path) -> LabelSet:
    n = grid.node_count
    ts, ys, objs, rest = [], [], [], []
    pos = {sid: k for k, sid in enumerate(grid.switch_ids)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            ts.append(int(row[0]))
            y = np.zeros(grid.n_switches)
            for sid in filter(None, row[1].split(";")):
                y[pos[int(sid)]] = 1.0
            ys.append(y)
            objs.append(float(row[2]))
            rest.append([float(a) for a in row[3:]])
    rest_arr = np.array(rest, dtype=float).reshape(-1, 3 * n)
    return LabelSet(np.array(ts), np.array(ys).reshape(-1, grid.n_switches), np.array(objs),
                    rest_arr[:, :n], rest_arr[:, n:2 * n], rest_arr[:, 2 * n:])
