"""Grid data model, topology predicates and Linearized-DistFlow physics.

All quantities are per-unit. Voltages are squared magnitudes ``v``; line
flows are directed and non-negative, ``p_ij`` flowing from a line's
``from_node`` to its ``to_node`` and ``p_ji`` the reverse.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import DegenerateVoltage, InfeasibleRadiality, InvalidGrid


@dataclass(frozen=True)
class Line:
    id: int
    from_node: int
    to_node: int
    r: float
    x: float
    is_switch: bool = False


@dataclass(frozen=True, eq=False)
class GridModel:
    """Immutable radial-capable distribution network.

    ``default_y`` is the datasheet switch position (1 closed), one entry per
    switch in line order.
    """

    name: str
    node_count: int
    lines: tuple[Line, ...]
    pcc_node: int = 0
    base_kv: float = 1.0
    base_kva: float = 1000.0
    v_lo: float = 0.95**2
    v_hi: float = 1.05**2
    node_labels: tuple[str, ...] = ()
    nominal_p: tuple[float, ...] = ()
    nominal_q: tuple[float, ...] = ()
    default_y: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        n = self.node_count
        if n < 2:
            raise InvalidGrid("a grid needs at least two nodes")
        if not 0 <= self.pcc_node < n:
            raise InvalidGrid(f"PCC node {self.pcc_node} out of range")
        for ln in self.lines:
            if not (0 <= ln.from_node < n and 0 <= ln.to_node < n):
                raise InvalidGrid(f"line {ln.id} references a missing node")
            if ln.from_node == ln.to_node:
                raise InvalidGrid(f"line {ln.id} is a self loop")
            if not (ln.r > 0 and ln.x > 0):
                raise InvalidGrid(f"line {ln.id} needs R > 0 and X > 0")
        if not self.v_lo < self.v_hi:
            raise InvalidGrid("voltage bounds must satisfy v_lo < v_hi")
        if not self.node_labels:
            object.__setattr__(self, "node_labels", tuple(str(i) for i in range(n)))
        if not self.nominal_p:
            object.__setattr__(self, "nominal_p", (0.0,) * n)
        if not self.nominal_q:
            object.__setattr__(self, "nominal_q", (0.0,) * n)
        if len(self.node_labels) != n or len(self.nominal_p) != n or len(self.nominal_q) != n:
            raise InvalidGrid("per-node tables must have node_count entries")
        if self.n_switches < 1:
            raise InvalidGrid("at least one switchable line is required")
        if not self.default_y:
            object.__setattr__(self, "default_y", (0,) * self.n_switches)
        if len(self.default_y) != self.n_switches:
            raise InvalidGrid("default_y needs one entry per switch")
        if not _connected(n, [(ln.from_node, ln.to_node) for ln in self.lines]):
            raise InvalidGrid("the grid with every line closed is not connected")
        fixed = [(ln.from_node, ln.to_node) for ln in self.lines if not ln.is_switch]
        if _has_cycle(n, fixed):
            raise InvalidGrid("non-switch lines contain a cycle; no radial topology exists")
        cutoff_L(self)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_switches(self) -> int:
        return sum(ln.is_switch for ln in self.lines)

    @cached_property
    def from_idx(self) -> np.ndarray:
        return np.array([ln.from_node for ln in self.lines], dtype=int)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return np.array([ln.to_node for ln in self.lines], dtype=int)

    @cached_property
    def r(self) -> np.ndarray:
        return np.array([ln.r for ln in self.lines], dtype=float)

    @cached_property
    def x(self) -> np.ndarray:
        return np.array([ln.x for ln in self.lines], dtype=float)

    @cached_property
    def switch_mask(self) -> np.ndarray:
        return np.array([ln.is_switch for ln in self.lines], dtype=bool)

    @cached_property
    def switch_lines(self) -> np.ndarray:
        """Line positions of the switches, in switch order."""
        return np.flatnonzero(self.switch_mask)

    @cached_property
    def fixed_lines(self) -> np.ndarray:
        return np.flatnonzero(~self.switch_mask)

    @cached_property
    def switch_ids(self) -> tuple[int, ...]:
        return tuple(self.lines[k].id for k in self.switch_lines)

    @cached_property
    def incidence(self) -> np.ndarray:
        """Node-by-line matrix: +1 at the from node, -1 at the to node."""
        c = np.zeros((self.node_count, self.n_lines))
        cols = np.arange(self.n_lines)
        c[self.from_idx, cols] = 1.0
        c[self.to_idx, cols] = -1.0
        c.setflags(write=False)
        return c

    @cached_property
    def non_pcc(self) -> np.ndarray:
        return np.array([j for j in range(self.node_count) if j != self.pcc_node], dtype=int)

    def node_index(self, label) -> int:
        """Position of the node carrying ``label`` (as printed in the source tables)."""
        try:
            return self.node_labels.index(str(label))
        except ValueError:
            raise KeyError(f"no node labelled {label!r} in {self.name}") from None

    def line_position(self, line_id: int) -> int:
        for k, ln in enumerate(self.lines):
            if ln.id == line_id:
                return k
        raise KeyError(f"no line with id {line_id}")

    def closed_lines(self, y) -> np.ndarray:
        """Boolean mask over lines: every fixed line plus the closed switches."""
        y = np.asarray(y)
        if y.shape != (self.n_switches,):
            raise ValueError(f"expected {self.n_switches} switch states, got shape {y.shape}")
        closed = ~self.switch_mask.copy()
        closed[self.switch_lines] = y > 0.5
        return closed


@dataclass
class TopologyState:
    y: np.ndarray
    z_ij: np.ndarray
    z_ji: np.ndarray

    def closed_switch_ids(self, grid: GridModel) -> tuple[int, ...]:
        return tuple(grid.switch_ids[k] for k in np.flatnonzero(np.asarray(self.y) > 0.5))


@dataclass
class PowerState:
    v: np.ndarray
    p_ij: np.ndarray
    p_ji: np.ndarray
    q_ij: np.ndarray
    q_ji: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray

    @classmethod
    def zeros(cls, grid: GridModel) -> "PowerState":
        n, m = grid.node_count, grid.n_lines
        return cls(np.ones(n), *(np.zeros(m) for _ in range(4)), *(np.zeros(n) for _ in range(4)))


def cutoff_L(grid: GridModel) -> int:
    """Number of switches that must be closed for N-1 branches."""
    n_fixed = grid.n_lines - grid.n_switches
    L = (grid.node_count - 1) - n_fixed
    if not 0 <= L <= grid.n_switches:
        raise InfeasibleRadiality(f"cutoff L={L} outside [0, {grid.n_switches}]")
    return L


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def _has_cycle(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    ds = _DisjointSet(n)
    return not all(ds.union(a, b) for a, b in edges)


def _connected(n: int, edges: Sequence[tuple[int, int]]) -> bool:
    ds = _DisjointSet(n)
    for a, b in edges:
        ds.union(a, b)
    return len({ds.find(i) for i in range(n)}) == 1


def is_radial(grid: GridModel, y) -> bool:
    """True iff fixed lines plus closed switches form a spanning tree."""
    closed = grid.closed_lines(y)
    if closed.sum() != grid.node_count - 1:
        return False
    ds = _DisjointSet(grid.node_count)
    for k in np.flatnonzero(closed):
        if not ds.union(int(grid.from_idx[k]), int(grid.to_idx[k])):
            return False
    return True


def tree_order(grid: GridModel, y):
    """Breadth-first order from the PCC over the closed lines.

    Returns ``(order, parent_line, downstream)`` where ``parent_line[j]`` is
    the line feeding node ``j`` (-1 at the PCC) and ``downstream[k]`` is
    True when line ``k`` is traversed from ``from_node`` to ``to_node``.
    """
    closed = grid.closed_lines(y)
    adj: list[list[int]] = [[] for _ in range(grid.node_count)]
    for k in np.flatnonzero(closed):
        adj[grid.from_idx[k]].append(k)
        adj[grid.to_idx[k]].append(k)
    parent_line = np.full(grid.node_count, -1, dtype=int)
    downstream = np.zeros(grid.n_lines, dtype=bool)
    seen = np.zeros(grid.node_count, dtype=bool)
    seen[grid.pcc_node] = True
    order = [grid.pcc_node]
    queue = deque(order)
    while queue:
        a = queue.popleft()
        for k in adj[a]:
            b = grid.to_idx[k] if grid.from_idx[k] == a else grid.from_idx[k]
            if seen[b]:
                continue
            seen[b] = True
            parent_line[b] = k
            downstream[k] = grid.from_idx[k] == a
            order.append(int(b))
            queue.append(b)
    return np.array(order), parent_line, downstream


def radial_topology(grid: GridModel, y) -> TopologyState:
    """Topology for a radial ``y`` with flow directions pointing away from the PCC."""
    y = np.asarray(y, dtype=float)
    _, parent_line, downstream = tree_order(grid, y)
    z_ij = np.zeros(grid.n_lines)
    z_ji = np.zeros(grid.n_lines)
    used = parent_line[parent_line >= 0]
    z_ij[used] = downstream[used]
    z_ji[used] = ~downstream[used]
    return TopologyState(y=y, z_ij=z_ij, z_ji=z_ji)


def distflow_residuals(grid: GridModel, topo: TopologyState | None, state: PowerState) -> np.ndarray:
    """Stacked residuals of nodal P balance, nodal Q balance and non-switch Ohm's law.

    ``topo`` is accepted for interface symmetry; the equalities checked here
    do not involve switch states.
    """
    c = grid.incidence
    net_p = np.asarray(state.p_ij) - np.asarray(state.p_ji)
    net_q = np.asarray(state.q_ij) - np.asarray(state.q_ji)
    res_p = state.p_gen - state.p_load - net_p @ c.T
    res_q = state.q_gen - state.q_load - net_q @ c.T
    v = np.asarray(state.v)
    fx = grid.fixed_lines
    drop = v[..., grid.to_idx[fx]] - v[..., grid.from_idx[fx]]
    res_v = drop + 2.0 * (grid.r[fx] * net_p[..., fx] + grid.x[fx] * net_q[..., fx])
    return np.concatenate([res_p, res_q, res_v], axis=-1)


def objective_f(grid: GridModel, state: PowerState):
    """Quadratic loss proxy: sum of R times squared directed flows."""
    sq = state.p_ij**2 + state.p_ji**2 + state.q_ij**2 + state.q_ji**2
    return np.sum(sq * grid.r, axis=-1)


def line_losses(grid: GridModel, state: PowerState):
    """Line losses R((P_ij-P_ji)^2 + (Q_ij-Q_ji)^2)/v_i summed over lines."""
    v_from = np.asarray(state.v)[..., grid.from_idx]
    if np.any(v_from <= 0):
        raise DegenerateVoltage("non-positive sending-end voltage")
    dp = state.p_ij - state.p_ji
    dq = state.q_ij - state.q_ji
    return np.sum(grid.r * (dp**2 + dq**2) / v_from, axis=-1)

