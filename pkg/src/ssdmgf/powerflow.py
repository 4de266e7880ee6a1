"""Switched linear unbalanced power flow with squared voltages.

Flows are stored in each line's own from->to orientation. A bus balances as

    injection + sum(inflow on lines ending here) - sum(outflow on lines starting here) = 0

and a closed line obeys v_to = v_from - 2 (r p + x q) on its phases.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .report import Violation, ViolationReport
from .topology import Feeder

if TYPE_CHECKING:  # pragma: no cover
    from .plan import RestorationPlan


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class FeederArrays:
    """Dense per-line / per-bus arrays of a feeder."""

    n_bus: int
    ends: np.ndarray  # [Nl, 2] bus positions
    r: np.ndarray  # [Nl, 3, 3]
    x: np.ndarray
    p_max: np.ndarray  # [Nl, 3]
    q_max: np.ndarray
    line_mask: np.ndarray  # [Nl, 3]
    bus_mask: np.ndarray  # [Nb, 3]
    kinds: tuple[str, ...]

    @classmethod
    def of(cls, feeder: Feeder) -> "FeederArrays":
        cached = getattr(feeder, "_arrays", None)
        if cached is not None:
            return cached
        pos = feeder.bus_pos
        nl = len(feeder.lines)
        ends = np.array([[pos[ln.from_bus], pos[ln.to_bus]] for ln in feeder.lines], dtype=int).reshape(nl, 2)
        lmask = np.zeros((nl, 3), dtype=bool)
        for i, ln in enumerate(feeder.lines):
            lmask[i, list(ln.phases)] = True
        bmask = np.zeros((len(pos), 3), dtype=bool)
        for b, i in pos.items():
            bmask[i, list(feeder.buses[b].phases)] = True
        out = cls(
            n_bus=len(pos),
            ends=ends,
            r=np.stack([ln.r for ln in feeder.lines]) if nl else np.zeros((0, 3, 3)),
            x=np.stack([ln.x for ln in feeder.lines]) if nl else np.zeros((0, 3, 3)),
            p_max=np.stack([ln.p_max for ln in feeder.lines]) if nl else np.zeros((0, 3)),
            q_max=np.stack([ln.q_max for ln in feeder.lines]) if nl else np.zeros((0, 3)),
            line_mask=lmask,
            bus_mask=bmask,
            kinds=tuple(ln.kind for ln in feeder.lines),
        )
        feeder._arrays = out
        return out


@dataclass(frozen=True, eq=False)
class FlowState:
    p_line: np.ndarray  # [..., Nl, 3]
    q_line: np.ndarray
    v: np.ndarray  # [..., Nb, 3] squared magnitudes, zero on dead buses and absent phases
    imbalance: np.ndarray  # [..., n_roots, 3, 2] net (p, q) injection left at each root


class TreeOperator:
    """Linear map from bus injections to line flows and squared voltages for a
    fixed energized forest.

    ``roots`` lists one bus per connected component; its squared voltage is
    held at ``v_root``.
    """

    def __init__(
        self,
        arrays: FeederArrays,
        energized: Iterable[int],
        closed: Iterable[int],
        roots: Sequence[int],
        v_root: float = 1.0,
    ):
        self.arrays = arrays
        nb = arrays.n_bus
        energized = sorted(set(int(b) for b in energized))
        closed = sorted(set(int(l) for l in closed))
        live = np.zeros(nb, dtype=bool)
        live[energized] = True
        adj: dict[int, list[tuple[int, int]]] = {b: [] for b in energized}
        for li in closed:
            a, b = arrays.ends[li]
            if not (live[a] and live[b]):
                raise TopologyError(f"closed line #{li} touches a de-energized bus")
            adj[a].append((li, b))
            adj[b].append((li, a))
        parent_line = np.full(nb, -1, dtype=int)
        parent_bus = np.full(nb, -1, dtype=int)
        comp_root = np.full(nb, -1, dtype=int)
        order: list[int] = []
        seen = np.zeros(nb, dtype=bool)
        for root in roots:
            if not live[root]:
                raise TopologyError(f"root bus #{root} is not energized")
            if seen[root]:
                raise TopologyError(f"root bus #{root} shares a component with another root")
            seen[root] = True
            comp_root[root] = root
            queue = deque([root])
            while queue:
                b = queue.popleft()
                order.append(b)
                for li, nxt in adj[b]:
                    if li == parent_line[b]:
                        continue
                    if seen[nxt]:
                        raise TopologyError("closed lines contain a cycle")
                    seen[nxt] = True
                    parent_line[nxt] = li
                    parent_bus[nxt] = b
                    comp_root[nxt] = root
                    queue.append(nxt)
        missing = [b for b in energized if not seen[b]]
        if missing:
            raise TopologyError(f"energized buses {missing} are not connected to any root")

        self.n_bus = nb
        self.roots = list(roots)
        self.order = order
        self.tree_lines = np.array([parent_line[b] for b in order if parent_line[b] >= 0], dtype=int)
        children = np.array([b for b in order if parent_line[b] >= 0], dtype=int)
        n_tree = len(self.tree_lines)
        idx_of_line = {int(l): i for i, l in enumerate(self.tree_lines)}
        # subtree indicator: row i covers the child side of tree line i
        sub = np.zeros((n_tree, nb))
        member = {b: {b} for b in order}
        for b in reversed(order):
            pb = parent_bus[b]
            if pb >= 0:
                member[pb] |= member[b]
        for i, c in enumerate(children):
            sub[i, sorted(member[int(c)])] = 1.0
        # path indicator: bus b depends on every tree line from its root down to b
        path = np.zeros((nb, n_tree))
        for b in order:
            pb = parent_bus[b]
            if pb >= 0:
                path[b] = path[pb]
                path[b, idx_of_line[int(parent_line[b])]] = 1.0
        # +1 when the line's from-bus is the parent (flow parent->child is positive)
        sign = np.array(
            [1.0 if arrays.ends[l, 0] == parent_bus[c] else -1.0 for l, c in zip(self.tree_lines, children)]
        )
        self.sub = sub
        self.path = path
        self.sign = sign
        self.live = live
        self.comp_root = comp_root
        self.v_root = v_root
        self.r_tree = arrays.r[self.tree_lines]
        self.x_tree = arrays.x[self.tree_lines]
        self.root_rows = np.zeros((len(self.roots), nb))
        for i, root in enumerate(self.roots):
            self.root_rows[i, comp_root == root] = 1.0

    def apply(self, inj_p: np.ndarray, inj_q: np.ndarray) -> FlowState:
        """Injections of shape [..., Nb, 3] (positive = generation)."""
        arrays = self.arrays
        inj_p = np.asarray(inj_p, dtype=float)
        inj_q = np.asarray(inj_q, dtype=float)
        lead = inj_p.shape[:-2]
        # flow parent->child equals the withdrawal of the child's subtree
        p_pc = -np.einsum("lb,...bp->...lp", self.sub, inj_p)
        q_pc = -np.einsum("lb,...bp->...lp", self.sub, inj_q)
        p_line = np.zeros(lead + (len(arrays.ends), 3))
        q_line = np.zeros_like(p_line)
        if len(self.tree_lines):
            p_line[..., self.tree_lines, :] = self.sign[:, None] * p_pc
            q_line[..., self.tree_lines, :] = self.sign[:, None] * q_pc
        drop = np.einsum("lij,...lj->...li", self.r_tree, p_pc) + np.einsum("lij,...lj->...li", self.x_tree, q_pc)
        v = self.v_root - 2.0 * np.einsum("bl,...lp->...bp", self.path, drop)
        mask = arrays.bus_mask & self.live[:, None]
        v = np.where(mask, v, 0.0)
        imb_p = np.einsum("rb,...bp->...rp", self.root_rows, inj_p)
        imb_q = np.einsum("rb,...bp->...rp", self.root_rows, inj_q)
        return FlowState(p_line, q_line, v, np.stack([imb_p, imb_q], axis=-1))


def component_roots(arrays: FeederArrays, energized: Iterable[int], closed: Iterable[int],
                    preferred: Sequence[int]) -> list[int]:
    """One root bus per component: the first bus of ``preferred`` inside it,
    else the lowest bus id of the component."""
    from .unionfind import DisjointSet

    energized = sorted(set(int(b) for b in energized))
    dsu = DisjointSet(energized)
    for li in closed:
        a, b = arrays.ends[li]
        dsu.union(int(a), int(b))
    chosen: dict = {}
    for b in preferred:
        if b in dsu:
            chosen.setdefault(dsu.find(b), b)
    for b in energized:
        chosen.setdefault(dsu.find(b), b)
    return sorted(chosen.values())


def solve_tree_flow(
    feeder: Feeder,
    energized: Iterable[int],
    closed: Iterable[int],
    inj_p: np.ndarray,
    inj_q: np.ndarray,
    roots: Sequence[int] | None = None,
    v_root: float = 1.0,
) -> FlowState:
    """Fill flows by downstream aggregation and voltages root-to-leaf.

    Bus and line arguments are positions in ``feeder.bus_ids`` / ``feeder.lines``.
    """
    arrays = FeederArrays.of(feeder)
    energized = list(energized)
    closed = list(closed)
    if roots is None:
        roots = component_roots(arrays, energized, closed, ())
    return TreeOperator(arrays, energized, closed, roots, v_root).apply(inj_p, inj_q)


# --------------------------------------------------------------------------- checks on plans


def bus_injections(feeder: Feeder, plan: "RestorationPlan", t: int) -> tuple[np.ndarray, np.ndarray]:
    p = plan.p_pv[t] - plan.p_cl[t] - plan.p_nl[t]
    q = plan.q_pv[t] - plan.q_cl[t] - plan.q_nl[t]
    p = p.copy()
    q = q.copy()
    if feeder.tg is not None:
        i = feeder.bus_pos[feeder.tg.bus]
        p[i] += plan.p_tg[t]
        q[i] += plan.q_tg[t]
    for j, b in enumerate(feeder.batteries):
        i = feeder.bus_pos[b.bus]
        p[i] += plan.p_bess[t, j]
        q[i] += plan.q_bess[t, j]
    return p, q


def nodal_balance_residuals(feeder: Feeder, plan: "RestorationPlan", t: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus per-phase (p, q) balance residuals at step t."""
    arrays = FeederArrays.of(feeder)
    inj_p, inj_q = bus_injections(feeder, plan, t)
    res_p = inj_p.copy()
    res_q = inj_q.copy()
    for li, (a, b) in enumerate(arrays.ends):
        res_p[a] -= plan.p_line[t, li]
        res_q[a] -= plan.q_line[t, li]
        res_p[b] += plan.p_line[t, li]
        res_q[b] += plan.q_line[t, li]
    return res_p * arrays.bus_mask, res_q * arrays.bus_mask


def balance_check(feeder: Feeder, plan: "RestorationPlan", t: int, tol: float) -> ViolationReport:
    res_p, res_q = nodal_balance_residuals(feeder, plan, t)
    out = ViolationReport()
    for name, res in (("p", res_p), ("q", res_q)):
        worst = np.abs(res).max(axis=1)
        for i in np.flatnonzero(worst > tol):
            out.append(Violation("eq34", t, f"bus {feeder.bus_ids[i]}", float(worst[i]), f"{name} balance"))
    arrays = FeederArrays.of(feeder)
    for li in range(len(arrays.ends)):
        off = ~arrays.line_mask[li]
        leak = max(np.abs(plan.p_line[t, li][off]).max(initial=0.0), np.abs(plan.q_line[t, li][off]).max(initial=0.0))
        if leak > tol:
            out.append(Violation("eq34", t, f"line {feeder.lines[li].id}", float(leak), "flow on an absent phase"))
    return out


def voltage_drop_check(feeder: Feeder, plan: "RestorationPlan", t: int, tol: float = 1e-6,
                       v_cap: float = 1.05**2) -> ViolationReport:
    arrays = FeederArrays.of(feeder)
    out = ViolationReport()
    for li, (a, b) in enumerate(arrays.ends):
        ph = arrays.line_mask[li]
        drop = arrays.r[li] @ plan.p_line[t, li] + arrays.x[li] @ plan.q_line[t, li]
        gap = (plan.v[t, b] - plan.v[t, a] + 2.0 * drop)[ph]
        slack = (1 - int(plan.u_line[t, li])) * v_cap
        worst = float(np.abs(gap).max(initial=0.0))
        if worst > slack + tol:
            out.append(Violation("eq35", t, f"line {feeder.lines[li].id}", worst - slack))
    return out


def security_check(feeder: Feeder, plan: "RestorationPlan", t: int, v_min_sq: float = 0.95**2,
                   v_max_sq: float = 1.05**2, tol: float = 1e-6) -> ViolationReport:
    """Line limits, squared-voltage band and zero flow on a closing SSW.

    Line limits are applied to every line, SSWs included.
    """
    arrays = FeederArrays.of(feeder)
    out = ViolationReport()
    for li, ln in enumerate(feeder.lines):
        u = int(plan.u_line[t, li])
        for name, flow, cap in (("p", plan.p_line[t, li], arrays.p_max[li]), ("q", plan.q_line[t, li], arrays.q_max[li])):
            excess = float((np.abs(flow) - u * cap).max())
            if excess > tol:
                out.append(Violation("eq36a", t, f"line {ln.id}", excess, f"{name} limit"))
        if ln.kind == "SSW":
            prev = int(plan.u_line[t - 1, li]) if t > 0 else 0
            if u - prev == 1:
                flow = max(np.abs(plan.p_line[t, li]).max(), np.abs(plan.q_line[t, li]).max())
                if flow > tol:
                    out.append(Violation("eq19", t, f"line {ln.id}", float(flow), "flow at the closing step"))
    for i, b in enumerate(feeder.bus_ids):
        ub = int(plan.u_b[t, i])
        v = plan.v[t, i][arrays.bus_mask[i]]
        low = float((ub * v_min_sq - v).max())
        high = float((v - ub * v_max_sq).max())
        if low > tol:
            out.append(Violation("eq36b", t, f"bus {b}", low, "below band"))
        if high > tol:
            out.append(Violation("eq36b", t, f"bus {b}", high, "above band"))
    return out
