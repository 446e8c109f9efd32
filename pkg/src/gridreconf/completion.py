"""Variable-space completion: independents in, full decision vector out.

The decision vector ``psi`` is split into independents ``z`` (predicted or
rounded) and dependents ``phi`` (recovered in closed form from the flow
equalities). Both halves are flat arrays whose block layout is held by
:class:`IndexMap`. The completion map and the inequality rows are affine,
so their Jacobians are constant per grid and computed once by probing.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np
from scipy import sparse

from .constraints import DEFAULT_BIG_M, inequality_labels, inequality_values
from .errors import DimensionMismatch
from .grid import GridModel, PowerState, TopologyState, objective_f
from .phyr import insi, insi_grad, scale_to_box_with_grad

FLOW_CAP = 10.0


def _layout(blocks):
    slices, start = {}, 0
    for name, size in blocks:
        slices[name] = slice(start, start + size)
        start += size
    return slices, start


class IndexMap:
    """Block layout of ``z``, ``phi`` and the raw network output for one grid."""

    def __init__(self, grid: GridModel):
        self.grid = grid
        n, m, s = grid.node_count, grid.n_lines, grid.n_switches
        self.z_slices, self.n_z = _layout([
            ("z_ji", m), ("y", s), ("v", n - 1), ("p_ji", m), ("p_ij", m), ("q_ji", m),
            ("q_ij_sw", s), ("p_load_pcc", 1), ("q_load_pcc", 1),
        ])
        self.phi_slices, self.n_phi = _layout([
            ("z_ij", m), ("p_gen", n), ("q_gen", n), ("q_ij_fixed", m - s),
        ])
        self.raw_slices, self.n_raw = _layout([
            ("y", s), ("z_ji", m), ("v", n - 1), ("p_ji", m), ("p_ij", m), ("q_ji", m), ("q_ij_sw", s),
        ])

    @property
    def n_psi(self) -> int:
        return self.n_z + self.n_phi

    def _check(self, a, size, what):
        a = np.asarray(a, dtype=float)
        if a.shape[-1:] != (size,):
            raise DimensionMismatch(f"{what} needs trailing size {size}, got shape {a.shape}")
        return a

    def structure(self, z, phi, p_load, q_load) -> "DecisionVector":
        """Named topology and power state from flat ``z``, ``phi`` and scenario loads."""
        g = self.grid
        z = self._check(z, self.n_z, "z")
        phi = self._check(phi, self.n_phi, "phi")
        zs, ps = self.z_slices, self.phi_slices
        batch = np.broadcast_shapes(z.shape[:-1], phi.shape[:-1], np.shape(p_load)[:-1])
        v = np.ones(batch + (g.node_count,))
        v[..., g.non_pcc] = z[..., zs["v"]]
        q_ij = np.zeros(batch + (g.n_lines,))
        q_ij[..., g.switch_lines] = z[..., zs["q_ij_sw"]]
        q_ij[..., g.fixed_lines] = phi[..., ps["q_ij_fixed"]]
        p_l = np.array(np.broadcast_to(p_load, batch + (g.node_count,)), dtype=float)
        q_l = np.array(np.broadcast_to(q_load, batch + (g.node_count,)), dtype=float)
        p_l[..., g.pcc_node] = z[..., zs["p_load_pcc"]][..., 0]
        q_l[..., g.pcc_node] = z[..., zs["q_load_pcc"]][..., 0]
        topo = TopologyState(z[..., zs["y"]], phi[..., ps["z_ij"]], z[..., zs["z_ji"]])
        state = PowerState(
            v, z[..., zs["p_ij"]], z[..., zs["p_ji"]], q_ij, z[..., zs["q_ji"]],
            phi[..., ps["p_gen"]], phi[..., ps["q_gen"]], p_l, q_l,
        )
        return DecisionVector(topo, state)

    def flatten(self, dv: "DecisionVector"):
        """Inverse of :meth:`structure`; returns ``(z, phi)``."""
        g = self.grid
        t, st = dv.topology, dv.state
        batch = np.shape(st.v)[:-1]
        z = np.zeros(batch + (self.n_z,))
        phi = np.zeros(batch + (self.n_phi,))
        zs, ps = self.z_slices, self.phi_slices
        z[..., zs["z_ji"]] = t.z_ji
        z[..., zs["y"]] = t.y
        z[..., zs["v"]] = np.asarray(st.v)[..., g.non_pcc]
        z[..., zs["p_ji"]] = st.p_ji
        z[..., zs["p_ij"]] = st.p_ij
        z[..., zs["q_ji"]] = st.q_ji
        z[..., zs["q_ij_sw"]] = np.asarray(st.q_ij)[..., g.switch_lines]
        z[..., zs["p_load_pcc"]] = np.asarray(st.p_load)[..., g.pcc_node:g.pcc_node + 1]
        z[..., zs["q_load_pcc"]] = np.asarray(st.q_load)[..., g.pcc_node:g.pcc_node + 1]
        phi[..., ps["z_ij"]] = t.z_ij
        phi[..., ps["p_gen"]] = st.p_gen
        phi[..., ps["q_gen"]] = st.q_gen
        phi[..., ps["q_ij_fixed"]] = np.asarray(st.q_ij)[..., g.fixed_lines]
        return z, phi


@dataclass
class DecisionVector:
    """A full candidate solution: switch and direction binaries plus the power state."""

    topology: TopologyState
    state: PowerState

    def row(self, k: int) -> "DecisionVector":
        """Instance ``k`` of a batched decision."""
        t = TopologyState(*(np.asarray(getattr(self.topology, f.name))[k] for f in fields(TopologyState)))
        s = PowerState(*(np.asarray(getattr(self.state, f.name))[k] for f in fields(PowerState)))
        return DecisionVector(t, s)


def complete(grid: GridModel, p_load, q_load, z, imap: IndexMap | None = None) -> np.ndarray:
    """Dependents ``phi`` from independents ``z`` and scenario loads.

    Direction indicators follow from the line/switch identities, non-switch
    reactive flows from Ohm's law, and dispatch from the nodal balances.
    """
    imap = imap or IndexMap(grid)
    z = imap._check(z, imap.n_z, "z")
    zs = imap.z_slices
    batch = np.broadcast_shapes(z.shape[:-1], np.shape(p_load)[:-1])
    z = np.broadcast_to(z, batch + (imap.n_z,))
    phi = np.zeros(batch + (imap.n_phi,))
    ps = imap.phi_slices
    sw, fx = grid.switch_lines, grid.fixed_lines

    z_ji = z[..., zs["z_ji"]]
    z_ij = 1.0 - z_ji
    z_ij[..., sw] = z[..., zs["y"]] - z_ji[..., sw]
    phi[..., ps["z_ij"]] = z_ij

    v = np.ones(batch + (grid.node_count,))
    v[..., grid.non_pcc] = z[..., zs["v"]]
    dp = z[..., zs["p_ij"]] - z[..., zs["p_ji"]]
    q_ji = z[..., zs["q_ji"]]
    dv_half = 0.5 * (v[..., grid.from_idx[fx]] - v[..., grid.to_idx[fx]])
    q_ij_fx = q_ji[..., fx] + (dv_half - grid.r[fx] * dp[..., fx]) / grid.x[fx]
    phi[..., ps["q_ij_fixed"]] = q_ij_fx

    q_ij = np.zeros(batch + (grid.n_lines,))
    q_ij[..., sw] = z[..., zs["q_ij_sw"]]
    q_ij[..., fx] = q_ij_fx
    dq = q_ij - q_ji

    p_l = np.array(np.broadcast_to(p_load, batch + (grid.node_count,)), dtype=float)
    q_l = np.array(np.broadcast_to(q_load, batch + (grid.node_count,)), dtype=float)
    p_l[..., grid.pcc_node] = z[..., zs["p_load_pcc"]][..., 0]
    q_l[..., grid.pcc_node] = z[..., zs["q_load_pcc"]][..., 0]
    c = grid.incidence
    phi[..., ps["p_gen"]] = p_l + dp @ c.T
    phi[..., ps["q_gen"]] = q_l + dq @ c.T
    return phi


@dataclass
class AssemblyCache:
    """Elementwise derivatives of the scaled independents w.r.t. raw outputs."""

    dz_draw: np.ndarray


def assemble_independents(grid: GridModel, raw, y, imap: IndexMap | None = None,
                          p_load_pcc=0.0, q_load_pcc=0.0, flow_cap: float = FLOW_CAP, z_ji=None):
    """Scale raw network outputs into ``z``.

    ``y`` are switch states already produced by the rounding head. Voltages
    land in ``(v_lo, v_hi)``, flows in ``(0, flow_cap)``, and direction
    indicators pass through InSi unless ``z_ji`` supplies them directly.
    Returns ``(z, cache)``.
    """
    imap = imap or IndexMap(grid)
    raw = imap._check(raw, imap.n_raw, "raw output")
    y = imap._check(y, grid.n_switches, "switch states")
    rs, zs = imap.raw_slices, imap.z_slices
    batch = raw.shape[:-1]
    z = np.zeros(batch + (imap.n_z,))
    dz = np.zeros(batch + (imap.n_z,))
    z[..., zs["y"]] = y
    if z_ji is None:
        u = raw[..., rs["z_ji"]]
        z[..., zs["z_ji"]] = insi(u)
        dz[..., zs["z_ji"]] = insi_grad(u)
    else:
        z[..., zs["z_ji"]] = z_ji
    u = raw[..., rs["v"]]
    z[..., zs["v"]], dz[..., zs["v"]] = scale_to_box_with_grad(u, grid.v_lo, grid.v_hi)
    for name in ("p_ji", "p_ij", "q_ji", "q_ij_sw"):
        u = raw[..., rs[name]]
        z[..., zs[name]], dz[..., zs[name]] = scale_to_box_with_grad(u, 0.0, flow_cap)
    z[..., zs["p_load_pcc"]] = np.asarray(p_load_pcc, dtype=float)[..., None]
    z[..., zs["q_load_pcc"]] = np.asarray(q_load_pcc, dtype=float)[..., None]
    return z, AssemblyCache(dz)


def raw_gradient(imap: IndexMap, grad_z, cache: AssemblyCache):
    """Chain ``dL/dz`` back to the raw outputs; the switch block is returned separately.

    Returns ``(grad_raw, grad_y)`` where ``grad_raw[..., y-slot]`` is left at
    zero for the head to fill in.
    """
    rs, zs = imap.raw_slices, imap.z_slices
    g = grad_z * cache.dz_draw
    out = np.zeros(grad_z.shape[:-1] + (imap.n_raw,))
    for name in ("z_ji", "v", "p_ji", "p_ij", "q_ji", "q_ij_sw"):
        out[..., rs[name]] = g[..., zs[name]]
    return out, grad_z[..., zs["y"]]


def _right_mul(a, mat_t):
    """``a @ M`` for a sparse ``M`` given as its transpose, keeping leading dims."""
    a = np.asarray(a)
    flat = a.reshape(-1, a.shape[-1])
    return np.asarray(mat_t @ flat.T).T.reshape(a.shape[:-1] + (mat_t.shape[0],))


class CompletionModel:
    """Constant Jacobians of completion and of the inequality rows for one grid."""

    def __init__(self, grid: GridModel, big_m: float = DEFAULT_BIG_M, no_export: bool = False):
        self.grid = grid
        self.big_m = big_m
        self.no_export = no_export
        self.imap = IndexMap(grid)
        self.labels = inequality_labels(grid, no_export)

    @cached_property
    def completion_jacobian(self) -> np.ndarray:
        """``d phi / d z`` (n_phi x n_z)."""
        n = self.grid.node_count
        zero = np.zeros(n)
        eye = np.eye(self.imap.n_z)
        base = complete(self.grid, zero, zero, np.zeros(self.imap.n_z), self.imap)
        jac = (complete(self.grid, zero, zero, eye, self.imap) - base).T
        jac.setflags(write=False)
        return jac

    def _h(self, psi, bounds):
        im = self.imap
        dv = im.structure(psi[..., :im.n_z], psi[..., im.n_z:], np.zeros(self.grid.node_count),
                          np.zeros(self.grid.node_count))
        return inequality_values(self.grid, dv.topology, dv.state, bounds, self.big_m, self.no_export)

    @cached_property
    def penalty_jacobian(self) -> np.ndarray:
        """``d h / d psi`` (n_h x n_psi)."""
        n = self.grid.node_count
        zb = (np.zeros(n),) * 4
        eye = np.eye(self.imap.n_psi)
        base = self._h(np.zeros(self.imap.n_psi), zb)
        jac = (self._h(eye, zb) - base).T
        jac.setflags(write=False)
        return jac

    def decision(self, z, p_load, q_load) -> DecisionVector:
        return self.decision_flat(z, p_load, q_load)[1]

    def decision_flat(self, z, p_load, q_load):
        """``(psi, dv)`` for independents ``z``."""
        phi = complete(self.grid, p_load, q_load, z, self.imap)
        z = np.broadcast_to(z, phi.shape[:-1] + z.shape[-1:])
        return np.concatenate([z, phi], axis=-1), self.imap.structure(z, phi, p_load, q_load)

    def inequalities(self, dv: DecisionVector, bounds) -> np.ndarray:
        return inequality_values(self.grid, dv.topology, dv.state, bounds, self.big_m, self.no_export)

    @cached_property
    def _bounds_jacobian(self):
        """``h = H psi + B bounds + h_c``; returns sparse ``B^T`` and ``h_c``."""
        n = self.grid.node_count
        zero_psi = np.zeros(self.imap.n_psi)
        h_c = self._h(zero_psi, (np.zeros(n),) * 4)
        eye = np.eye(4 * n)
        h_b = self._h(np.broadcast_to(zero_psi, (4 * n, self.imap.n_psi)), tuple(eye[:, k * n:(k + 1) * n] for k in range(4)))
        return sparse.csr_matrix((h_b - h_c).T), h_c

    def inequalities_flat(self, psi, bounds) -> np.ndarray:
        """Inequality rows from flat ``psi`` using the constant affine structure."""
        b_t, h_c = self._bounds_jacobian
        bflat = np.concatenate([np.asarray(b, dtype=float) for b in bounds], axis=-1)
        return _right_mul(psi, self._penalty_jacobian_csr) + _right_mul(bflat, b_t) + h_c

    @cached_property
    def _penalty_jacobian_csr(self):
        return sparse.csr_matrix(self.penalty_jacobian)

    @cached_property
    def _completion_t(self):
        return sparse.csr_matrix(self.completion_jacobian.T)

    @cached_property
    def _penalty_t(self):
        return sparse.csr_matrix(self.penalty_jacobian.T)

    def psi_slice(self, name: str) -> slice:
        """Slice of a named block inside the flat ``psi = [z, phi]``."""
        im = self.imap
        if name in im.z_slices:
            return im.z_slices[name]
        sl = im.phi_slices[name]
        return slice(sl.start + im.n_z, sl.stop + im.n_z)

    def pullback(self, grad_psi) -> np.ndarray:
        """Gradient in ``z`` of a function of ``psi`` given its ``psi`` gradient."""
        nz = self.imap.n_z
        return grad_psi[..., :nz] + _right_mul(grad_psi[..., nz:], self._completion_t)

    def objective_and_grad(self, dv: DecisionVector):
        """``f`` and its gradient in ``psi``."""
        g = self.grid
        st = dv.state
        grad = np.zeros(np.shape(st.v)[:-1] + (self.imap.n_psi,))
        two_r = 2.0 * g.r
        grad[..., self.psi_slice("p_ij")] = two_r * st.p_ij
        grad[..., self.psi_slice("p_ji")] = two_r * st.p_ji
        grad[..., self.psi_slice("q_ji")] = two_r * st.q_ji
        grad[..., self.psi_slice("q_ij_sw")] = two_r[g.switch_lines] * st.q_ij[..., g.switch_lines]
        grad[..., self.psi_slice("q_ij_fixed")] = two_r[g.fixed_lines] * st.q_ij[..., g.fixed_lines]
        return objective_f(g, st), grad

    def penalty_and_grad(self, dv: DecisionVector, bounds, lambda_h: float, psi=None):
        """``lambda_h ||max(0, h)||^2`` and its gradient in ``psi``."""
        if psi is None:
            psi = np.concatenate(self.imap.flatten(dv), axis=-1)
        hinge = np.maximum(self.inequalities_flat(psi, bounds), 0.0)
        value = lambda_h * np.sum(hinge**2, axis=-1)
        return value, 2.0 * lambda_h * _right_mul(hinge, self._penalty_t)

    def loss_and_grad(self, z, p_load, q_load, bounds, lambda_h: float = 100.0):
        """Per-instance loss ``f + lambda_h ||max(0, h)||^2`` and its gradient in ``z``."""
        psi, dv = self.decision_flat(z, p_load, q_load)
        f, gf = self.objective_and_grad(dv)
        pen, gp = self.penalty_and_grad(dv, bounds, lambda_h, psi)
        return f + pen, self.pullback(gf + gp), dv


def training_loss(grid: GridModel, p_load, q_load, bounds, z, lambda_h: float = 100.0,
                  big_m: float = DEFAULT_BIG_M, no_export: bool = False):
    """Objective plus squared-hinge penalty on every inequality row."""
    loss, _, _ = CompletionModel(grid, big_m, no_export).loss_and_grad(z, p_load, q_load, bounds, lambda_h)
    return loss
