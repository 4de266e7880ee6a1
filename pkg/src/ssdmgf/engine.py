"""Step semantics shared by the search, the brute-force oracle and warm-start
dives.

A search state summarizes everything the future depends on: when each block
and each non-critical load came on, which switches are closed, the battery
states of charge and their last active-power output. An action is the set of
energizing and synchronizing switches closed at the next step; non-critical
pickup follows a fixed greedy rule so that an action fully determines the
transition.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .config import NOMINAL_HZ, SSDMGF, RuleSet
from .context import Instance
from .plan import RestorationPlan
from .powerflow import FeederArrays, TreeOperator, component_roots
from .sync_structure import Mode
from .unionfind import DisjointSet

_EPS = 1e-12


@dataclass(frozen=True)
class Action:
    esw: tuple[int, ...] = ()  # line positions
    ssw: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return len(self.esw) + len(self.ssw)

    def key(self):
        return (self.size, self.esw, self.ssw)


NO_ACTION = Action()


@dataclass(frozen=True)
class State:
    t: int  # next step to decide
    bk: tuple[int, ...]  # energization step per block, -1 if dead
    nl: tuple[int, ...]  # pickup step per bus, -1 if not picked up
    closed: frozenset  # closed switch lines
    soc: tuple[float, ...]
    p_prev: tuple[float, ...]  # total BESS output at the previous step


@dataclass(eq=False)
class StepRow:
    """Every plan variable at one step."""

    t: int
    u_bk: np.ndarray
    u_b: np.ndarray
    u_line: np.ndarray
    u_nlb: np.ndarray
    u_sync: np.ndarray
    mode_index: int | None
    klass: int
    s: int
    f_block: np.ndarray
    f_bus: np.ndarray
    f_qss: np.ndarray
    df_sync: np.ndarray
    p_tg: np.ndarray
    q_tg: np.ndarray
    p_bess: np.ndarray
    q_bess: np.ndarray
    p_pv: np.ndarray
    q_pv: np.ndarray
    p_cl: np.ndarray
    q_cl: np.ndarray
    p_nl: np.ndarray
    q_nl: np.ndarray
    p_line: np.ndarray
    q_line: np.ndarray
    v: np.ndarray
    soc: np.ndarray
    value: float  # objective contribution


@dataclass(eq=False)
class _Physics:
    ok: bool
    load_p: np.ndarray | None = None
    load_q: np.ndarray | None = None
    pv_p: np.ndarray | None = None
    pv_q: np.ndarray | None = None
    p_bess: np.ndarray | None = None
    q_bess: np.ndarray | None = None
    p_tg: np.ndarray | None = None
    q_tg: np.ndarray | None = None
    soc: np.ndarray | None = None
    p_tot: np.ndarray | None = None
    flow: object = None
    bus_on: np.ndarray | None = None


class Engine:
    def __init__(self, inst: Instance, rules: RuleSet = SSDMGF):
        self.inst = inst
        self.rules = rules
        self.prm = inst.params
        self.T = inst.T
        self.K = inst.K
        self.arrays = FeederArrays.of(inst.feeder)
        self.tg = inst.grid.tg_block
        self.tg_return = inst.tg_return
        self.damaged = inst.scenario.damaged
        self.bess_blocks = tuple(inst.grid.bess_blocks)
        self.n_bess = len(inst.bess)
        pair = inst.line_block_pair
        self.esw = [(li, int(pair[li][0]), int(pair[li][1])) for li in inst.esw_lines]
        self.ssw = [(li, int(pair[li][0]), int(pair[li][1])) for li in inst.ssw_lines]
        self.ssw_set = frozenset(inst.ssw_lines)
        self.switch_blocks = {li: (int(pair[li][0]), int(pair[li][1])) for li in inst.esw_lines + inst.ssw_lines}
        self.esw_of_block = [[li for li, a, b in self.esw if k in (a, b)] for k in range(self.K)]
        self.block_mat = np.zeros((self.K, inst.n_bus))
        self.block_mat[inst.bus_block, np.arange(inst.n_bus)] = 1.0
        ratio = inst.bess_s / inst.bess_droop
        self.share_weight = ratio
        self.bess_cap = (inst.bess_s / 3.0) ** 2
        self.tg_cap = (inst.tg_s / 3.0) ** 2
        self.ptot = inst.p_ld.sum(axis=2)  # [T, Nb]
        self.suffix = np.vstack([np.cumsum(self.ptot[::-1], axis=0)[::-1], np.zeros((1, inst.n_bus))])
        self.weight = inst.bus_weight
        self.nl_buses = tuple(int(b) for b in inst.nl_buses)
        self.preferred_roots = ([inst.tg_bus] if inst.tg_bus is not None else []) + sorted(int(b) for b in inst.bess_bus)
        self.bus_of_bess_block = {int(k): j for j, k in enumerate(inst.bess_block)}
        self._tree_cache: dict = {}
        self._esw_adj = [[] for _ in range(self.K)]
        for _, a, b in self.esw:
            self._esw_adj[a].append(b)
            self._esw_adj[b].append(a)
        lo, hi = inst.soc_bounds
        self.soc_lo, self.soc_hi = lo, hi

    # ------------------------------------------------------------------ states
    def initial_state(self) -> State:
        inst = self.inst
        return State(0, (-1,) * self.K, (-1,) * inst.n_bus, frozenset(), tuple(float(x) for x in inst.soc0),
                     (0.0,) * self.n_bess)

    def islands(self, bk: Sequence[int], closed: Iterable[int]) -> DisjointSet:
        dsu = DisjointSet(range(self.K))
        for li in closed:
            a, b = self.switch_blocks[li]
            dsu.union(a, b)
        return dsu

    # ------------------------------------------------------------------ actions
    def actions(self, st: State) -> list[Action]:
        """Switching actions allowed at step ``st.t`` before physics checks."""
        t = st.t
        if t == 0 or t >= self.T:
            return [NO_ACTION] if t < self.T else []
        live = [st.bk[k] >= 0 for k in range(self.K)]
        by_dst: dict[int, list[tuple[int, int]]] = {}
        for li, a, b in self.esw:
            if li in st.closed or live[a] == live[b]:
                continue
            src, dst = (a, b) if live[a] else (b, a)
            if dst == self.damaged or dst == self.tg:
                continue
            by_dst.setdefault(dst, []).append((li, src))
        dsts = sorted(by_dst)
        esw_choices = []
        m = self.inst.esw_m
        for combo in itertools.product(*[[None] + by_dst[d] for d in dsts]):
            chosen = [c for c in combo if c is not None]
            count: dict[int, int] = {}
            for _, src in chosen:
                count[src] = count.get(src, 0) + 1
            if any(n > m[src] + 1 for src, n in count.items()):
                continue
            esw_choices.append(tuple(sorted(li for li, _ in chosen)))

        ssw_choices = [()]
        if not (self.rules.ssw_lockout and not self.inst.u_tg[t]):
            cands = [(li, a, b) for li, a, b in self.ssw if li not in st.closed and live[a] and live[b]]
            if cands:
                dsu = self.islands(st.bk, st.closed)
                for r in range(1, len(cands) + 1):
                    for sub in itertools.combinations(cands, r):
                        if self._ssw_subset_ok(dsu, sub):
                            ssw_choices.append(tuple(li for li, _, _ in sub))
        out = [Action(e, s) for e in esw_choices for s in ssw_choices]
        out.sort(key=Action.key)
        return out

    def _ssw_subset_ok(self, dsu: DisjointSet, sub) -> bool:
        roots = [(dsu.find(a), dsu.find(b)) for _, a, b in sub]
        if any(x == y for x, y in roots):
            return False
        forest = DisjointSet({r for pair in roots for r in pair})
        for x, y in roots:
            if not forest.union(x, y):
                return False
        if self.rules.sync_safety:
            touched = [r for pair in roots for r in pair]
            if len(touched) != len(set(touched)):
                return False
        return True

    # ------------------------------------------------------------------ transition
    def step(self, st: State, action: Action) -> tuple[State, StepRow] | None:
        """Apply ``action`` at step ``st.t``; None if any constraint fails."""
        inst = self.inst
        t = st.t
        bk = list(st.bk)
        if t == 0:
            for k in self.bess_blocks:
                bk[k] = 0
        if self.tg is not None and inst.u_tg[t] and bk[self.tg] < 0:
            bk[self.tg] = t
        for li in action.esw:
            a, b = self.switch_blocks[li]
            dst = b if st.bk[a] >= 0 else a
            bk[dst] = t
        closed = st.closed | frozenset(action.esw) | frozenset(action.ssw)
        new_ssw = frozenset(action.ssw)

        mode, dsu = self._mode_at(t, bk, closed)
        if mode is None:
            return None

        nl = list(st.nl)
        base = self._physics(bk, nl, closed, new_ssw, t, t + 1, st.soc, st.p_prev)
        if not base.ok:
            return None
        cands = [b for b in self.nl_buses if nl[b] < 0 and bk[inst.bus_block[b]] >= 0]
        if cands:
            trial = list(nl)
            for b in cands:
                trial[b] = t
            if self._physics(bk, trial, closed, new_ssw, t, self.T, st.soc, st.p_prev).ok:
                nl = trial
            else:
                for b in cands:
                    trial = list(nl)
                    trial[b] = t
                    if self._physics(bk, trial, closed, new_ssw, t, self.T, st.soc, st.p_prev).ok:
                        nl = trial
            if nl != list(st.nl):
                base = self._physics(bk, nl, closed, new_ssw, t, t + 1, st.soc, st.p_prev)
        row = self._row(t, bk, nl, closed, new_ssw, mode, dsu, base, st)
        nxt = State(t + 1, tuple(bk), tuple(nl), closed, tuple(float(x) for x in base.soc[0]),
                    tuple(float(x) for x in base.p_tot[0]))
        return nxt, row

    def holds(self, st: State) -> bool:
        """Whether ``st`` survives to the horizon with no further switching."""
        if st.t >= self.T:
            return True
        return self._physics(st.bk, st.nl, st.closed, frozenset(), st.t, self.T, st.soc, st.p_prev).ok

    def _mode_at(self, t: int, bk: Sequence[int], closed) -> tuple[Mode | None, DisjointSet]:
        inst = self.inst
        dsu = self.islands(bk, closed)
        active = inst.active_bs(t)
        groups: dict[int, list[int]] = {}
        for k in active:
            groups.setdefault(dsu.find(k), []).append(k)
        n_ssw = len(closed & self.ssw_set)
        s_t = inst.n_bess_blocks + int(inst.u_tg[t]) - n_ssw
        if not active:
            return (Mode(()) if s_t == 0 else None), dsu
        mode = Mode.from_parts(groups.values())
        if inst.catalogue.index_of(mode) is None or mode.klass != s_t:
            return None, dsu
        return mode, dsu

    # ------------------------------------------------------------------ physics
    def _tree(self, blocks: frozenset, closed: frozenset) -> TreeOperator:
        key = (blocks, closed)
        op = self._tree_cache.get(key)
        if op is None:
            inst = self.inst
            buses = [int(b) for k in sorted(blocks) for b in inst.block_buses[k]]
            lines = [int(l) for k in sorted(blocks) for l in inst.block_ln_lines[k]] + sorted(closed)
            roots = component_roots(self.arrays, buses, lines, self.preferred_roots)
            op = TreeOperator(self.arrays, buses, lines, roots, self.prm.v_root)
            if len(self._tree_cache) > 20000:
                self._tree_cache.clear()
            self._tree_cache[key] = op
        return op

    def _dispatch_matrix(self, closed: frozenset, bk_eff: np.ndarray):
        """Per-block participation of each BESS and of the TG in island demand."""
        dsu = self.islands(bk_eff, closed)
        root = np.array([dsu.find(k) for k in range(self.K)])
        inst = self.inst
        tg_root = None if self.tg is None else root[self.tg]
        share = np.zeros((self.n_bess, self.K))
        for j in range(self.n_bess):
            r = root[inst.bess_block[j]]
            if r == tg_root:
                continue
            peers = [i for i in range(self.n_bess) if root[inst.bess_block[i]] == r]
            w = self.share_weight[j] / self.share_weight[peers].sum()
            share[j, root == r] = w
        tg_share = np.zeros(self.K)
        if self.tg is not None:
            tg_share[root == tg_root] = 1.0
        return share, tg_share

    def _physics(self, bk, nl, closed: frozenset, new_ssw: frozenset, t: int, t_end: int,
                 soc0, p_prev) -> _Physics:
        """Dispatch, storage, frequency indices and flows over steps [t, t_end).

        Future steps hold the switching state fixed; the TG block comes on
        by itself when the TG returns.
        """
        inst, prm = self.inst, self.prm
        S = np.arange(t, t_end)
        bk_eff = np.array(bk)
        if self.tg is not None and bk_eff[self.tg] < 0 and self.tg_return is not None:
            bk_eff[self.tg] = self.tg_return
        bus_bk = bk_eff[inst.bus_block]
        clpu = inst.clpu
        age_cl = S[:, None] - bus_bk[None, :]
        on = (bus_bk[None, :] >= 0) & (age_cl >= 0)
        mult = np.where(on & inst.is_cl[None, :], clpu[np.clip(age_cl, 0, 3)], 0.0)
        nl_arr = np.array(nl)
        age_nl = S[:, None] - nl_arr[None, :]
        mult = mult + np.where((nl_arr[None, :] >= 0) & (age_nl >= 0), clpu[np.clip(age_nl, 0, 3)], 0.0)
        load_p = inst.p_ld[S] * mult[:, :, None]
        load_q = load_p * inst.tan_load[None, :, None]
        pv_on = (bus_bk[None, :] >= 0) & (S[:, None] - bus_bk[None, :] >= prm.pv_delay)
        pv_p = inst.eta[S][:, None, None] * inst.pv_rating[None] * pv_on[:, :, None]
        pv_q = pv_p * inst.tan_pv[None, :, None]
        net_p = np.einsum("kb,sbp->skp", self.block_mat, load_p - pv_p)
        net_q = np.einsum("kb,sbp->skp", self.block_mat, load_q - pv_q)

        n = len(S)
        p_bess = np.zeros((n, self.n_bess, 3))
        q_bess = np.zeros_like(p_bess)
        p_tg = np.zeros((n, 3))
        q_tg = np.zeros((n, 3))
        segments = [(0, 1, closed - new_ssw), (1, n, closed)] if new_ssw else [(0, n, closed)]
        for lo, hi, cl in segments:
            if hi <= lo:
                continue
            share, tg_share = self._dispatch_matrix(cl, bk_eff)
            p_bess[lo:hi] = np.einsum("jk,skp->sjp", share, net_p[lo:hi])
            q_bess[lo:hi] = np.einsum("jk,skp->sjp", share, net_q[lo:hi])
            p_tg[lo:hi] = np.einsum("k,skp->sp", tg_share, net_p[lo:hi])
            q_tg[lo:hi] = np.einsum("k,skp->sp", tg_share, net_q[lo:hi])

        fail = _Physics(False)
        if np.any(p_bess**2 + q_bess**2 > self.bess_cap[None, :, None] + _EPS):
            return fail
        tg_cap = inst.u_tg[S] * self.tg_cap
        if np.any(p_tg**2 + q_tg**2 > tg_cap[:, None] + _EPS):
            return fail
        p_tot = p_bess.sum(axis=2)
        soc = np.asarray(soc0)[None, :] - np.cumsum(p_tot, axis=0) * inst.dt_h / inst.bess_e[None, :]
        if np.any(soc < self.soc_lo - _EPS) or np.any(soc > self.soc_hi + _EPS):
            return fail
        prev = np.vstack([np.asarray(p_prev)[None, :], p_tot[:-1]])
        jump = np.maximum(0.0, p_tot - prev) / inst.bess_s[None, :]
        if np.any(prm.rocof_gain * jump > prm.rocof_max + _EPS):
            return fail
        if np.any(NOMINAL_HZ - prm.nadir_gain * jump < prm.nadir_min - _EPS):
            return fail
        qss = NOMINAL_HZ - inst.bess_droop[None, :] * p_tot / inst.bess_s[None, :]
        if np.any(qss < prm.f_qss_min - _EPS) or np.any(qss > prm.f_qss_max + _EPS):
            return fail
        if np.any(qss < prm.f_min - _EPS) or np.any(qss > prm.f_max + _EPS):
            return fail

        # flows on the final energized forest; earlier steps see zero injection on later blocks
        last = S[-1]
        blocks = frozenset(int(k) for k in np.flatnonzero((bk_eff >= 0) & (bk_eff <= last)))
        op = self._tree(blocks, closed)
        inj_p = pv_p - load_p
        inj_q = pv_q - load_q
        for j, b in enumerate(inst.bess_bus):
            inj_p[:, b] += p_bess[:, j]
            inj_q[:, b] += q_bess[:, j]
        if inst.tg_bus is not None:
            inj_p[:, inst.tg_bus] += p_tg
            inj_q[:, inst.tg_bus] += q_tg
        flow = op.apply(inj_p, inj_q)
        on_bus = (bus_bk[None, :] >= 0) & (S[:, None] >= bus_bk[None, :])
        v = np.where(on_bus[:, :, None], flow.v, 0.0)
        mask = on_bus[:, :, None] & self.arrays.bus_mask[None]
        if np.any((v < prm.v_min_sq - _EPS) & mask) or np.any((v > prm.v_max_sq + _EPS) & mask):
            return fail
        if np.any(np.abs(flow.p_line) > self.arrays.p_max[None] + _EPS) or np.any(
            np.abs(flow.q_line) > self.arrays.q_max[None] + _EPS
        ):
            return fail
        flow.v[...] = v
        return _Physics(True, load_p, load_q, pv_p, pv_q, p_bess, q_bess, p_tg, q_tg, soc, p_tot, flow, on_bus)

    # ------------------------------------------------------------------ rows
    def _row(self, t, bk, nl, closed, new_ssw, mode, dsu, ph: _Physics, st: State) -> StepRow:
        inst = self.inst
        bk_arr = np.array(bk)
        u_bk = ((bk_arr >= 0) & (bk_arr <= t)).astype(np.int8)
        u_b = u_bk[inst.bus_block]
        u_line = np.zeros(inst.n_line, dtype=np.int8)
        for k in np.flatnonzero(u_bk):
            u_line[inst.block_ln_lines[k]] = 1
        for li in closed:
            u_line[li] = 1
        nl_arr = np.array(nl)
        u_nlb = ((nl_arr >= 0) & (nl_arr <= t)).astype(np.int8)

        bs = inst.bs_blocks
        active = set(inst.active_bs(t))
        n_bs = len(bs)
        u_sync = np.zeros((n_bs, n_bs), dtype=np.int8)
        for i, j in itertools.combinations(range(n_bs), 2):
            if bs[i] in active and bs[j] in active and dsu.find(bs[i]) == dsu.find(bs[j]):
                u_sync[i, j] = u_sync[j, i] = 1
        mode_index = inst.catalogue.index_of(mode) if mode.parts else None
        klass = mode.klass
        s_t = inst.n_bess_blocks + int(inst.u_tg[t]) - len(closed & self.ssw_set)

        p_tot = ph.p_tot[0]
        qss = NOMINAL_HZ - inst.bess_droop * p_tot / inst.bess_s
        # island frequency after any merge at this step
        root = np.array([dsu.find(k) for k in range(self.K)])
        island_f: dict[int, float] = {}
        if self.tg is not None and inst.u_tg[t]:
            island_f[root[self.tg]] = NOMINAL_HZ
        groups: dict[int, list[int]] = {}
        for j in range(self.n_bess):
            groups.setdefault(root[inst.bess_block[j]], []).append(j)
        for r, members in groups.items():
            if r not in island_f:
                w = inst.bess_s[members]
                island_f[r] = float((w * qss[members]).sum() / w.sum())
        n_new = len(new_ssw)
        df = np.zeros(self.n_bess)
        f_bess = qss.copy()
        for j in range(self.n_bess):
            k = int(inst.bess_block[j])
            partners = int(u_sync[inst.bs_pos[k]].sum())
            delta = n_new * partners
            if delta > 0:
                df[j] = (island_f[root[k]] - qss[j]) / delta
                f_bess[j] = qss[j] + delta * df[j]
        f_block = np.zeros(self.K)
        for k in np.flatnonzero(u_bk):
            f_block[k] = island_f.get(root[k], 0.0)
        for j in range(self.n_bess):
            f_block[inst.bess_block[j]] = f_bess[j]
        if self.tg is not None:
            f_block[self.tg] = NOMINAL_HZ * int(inst.u_tg[t])
        f_bus = f_block[inst.bus_block] * u_b

        load_p, load_q = ph.load_p[0], ph.load_q[0]
        cl = inst.is_cl[:, None]
        nlm = inst.is_nl[:, None]
        value = inst.dt_min * float((self.weight[:, None] * load_p).sum())
        return StepRow(
            t=t, u_bk=u_bk, u_b=u_b, u_line=u_line, u_nlb=u_nlb, u_sync=u_sync,
            mode_index=mode_index, klass=klass, s=s_t,
            f_block=f_block, f_bus=f_bus, f_qss=qss, df_sync=df,
            p_tg=ph.p_tg[0], q_tg=ph.q_tg[0], p_bess=ph.p_bess[0], q_bess=ph.q_bess[0],
            p_pv=ph.pv_p[0], q_pv=ph.pv_q[0],
            p_cl=load_p * cl, q_cl=load_q * cl, p_nl=load_p * nlm, q_nl=load_q * nlm,
            p_line=ph.flow.p_line[0], q_line=ph.flow.q_line[0], v=ph.flow.v[0],
            soc=ph.soc[0], value=value,
        )

    # ------------------------------------------------------------------ bound
    def bound(self, st: State) -> float:
        """Optimistic value of steps st.t .. T-1 (ignores every capacity limit)."""
        inst = self.inst
        t = st.t
        if t >= self.T:
            return 0.0
        earliest = self._earliest(st)
        bus_bk = np.array(st.bk)[inst.bus_block]
        on_time = np.full(inst.n_bus, -1)
        on_time[inst.is_cl & (bus_bk >= 0)] = bus_bk[inst.is_cl & (bus_bk >= 0)]
        nl = np.array(st.nl)
        on_time[inst.is_nl & (nl >= 0)] = nl[inst.is_nl & (nl >= 0)]
        total = np.zeros(inst.n_bus)
        live = on_time >= 0
        if live.any():
            tail = self.suffix[t].copy()
            for off in range(3):
                s = on_time + off
                sel = live & (s >= t) & (s < self.T)
                if sel.any():
                    total[sel] += (inst.clpu[off] - 1.0) * self.ptot[s[sel], np.flatnonzero(sel)]
            total[live] += tail[live]
        pending = ~live & (inst.is_cl | inst.is_nl)
        if pending.any():
            e = earliest[inst.bus_block]
            idx = np.flatnonzero(pending & (e < self.T))
            if idx.size:
                total[idx] += inst.load_tail_best[np.maximum(e[idx], t), idx]
        return inst.dt_min * float((self.weight * total).sum())

    def _earliest(self, st: State) -> np.ndarray:
        """Earliest step at which each block could be energized."""
        INF = 10**9
        t = st.t
        best = np.full(self.K, INF)
        for k in range(self.K):
            if st.bk[k] >= 0:
                best[k] = st.bk[k]
        if t == 0:
            for k in self.bess_blocks:
                best[k] = 0
        if self.tg is not None and best[self.tg] >= INF and self.tg_return is not None:
            best[self.tg] = max(self.tg_return, t)
        order = sorted((int(best[k]), k) for k in range(self.K) if best[k] < INF)

        heap = list(order)
        heapq.heapify(heap)
        done = set()
        while heap:
            d, k = heapq.heappop(heap)
            if k in done:
                continue
            done.add(k)
            for n in self._esw_adj[k]:
                if n == self.damaged or n == self.tg or n in done:
                    continue
                cand = max(d + 1, t)
                if cand < best[n]:
                    best[n] = cand
                    heapq.heappush(heap, (cand, n))
        return best

    # ------------------------------------------------------------------ replay
    def rollout(self, actions: Sequence[Action]) -> list[StepRow]:
        st = self.initial_state()
        rows = []
        for a in actions:
            res = self.step(st, a)
            if res is None:
                raise ValueError(f"action {a} is infeasible at step {st.t}")
            st, row = res
            rows.append(row)
        return rows


def build_plan(inst: Instance, rows: Sequence[StepRow], meta: dict | None = None) -> RestorationPlan:
    if len(rows) != inst.T:
        raise ValueError(f"need {inst.T} steps, got {len(rows)}")
    plan = RestorationPlan.empty(inst)
    for r in rows:
        t = r.t
        plan.u_bk[t] = r.u_bk
        plan.u_b[t] = r.u_b
        plan.u_line[t] = r.u_line
        plan.u_nlb[t] = r.u_nlb
        plan.u_sync[t] = r.u_sync
        plan.s[t] = r.s
        if r.mode_index is not None:
            plan.u_mode[t, r.mode_index] = 1
            plan.u_class[t, r.klass - 1] = 1
        for name in ("f_block", "f_bus", "f_qss", "df_sync", "p_tg", "q_tg", "p_bess", "q_bess", "p_pv",
                     "q_pv", "p_cl", "q_cl", "p_nl", "q_nl", "p_line", "q_line", "v", "soc"):
            getattr(plan, name)[t] = getattr(r, name)
    plan.meta.update(meta or {})
    return plan
