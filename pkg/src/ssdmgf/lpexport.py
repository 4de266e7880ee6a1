"""Mixed-integer linear model export in CPLEX LP text format.

The exported model mirrors the validator's constraint families. Quadratic
apparent-power caps become eight half-planes (a regular octagon inscribed
in the cap circle), bilinear synchronization products get McCormick rows and
the product of the event count with the frequency step becomes a big-M bounded
offset. Row names carry the validator's constraint tag as a prefix so row
families can be counted from the text.
"""

from __future__ import annotations

import itertools
import math
import pathlib
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .config import NOMINAL_HZ, SSDMGF, Params, RuleSet
from .context import Instance

INF = math.inf
_OCTAGON = [tuple(0.0 if abs(x) < 1e-12 else x for x in (math.cos(i * math.pi / 4), math.sin(i * math.pi / 4)))
            for i in range(8)]
_APOTHEM = math.cos(math.pi / 8)
PHASE = "abc"


def _num(x: float) -> str:
    if x == INF:
        return "inf"
    if x == -INF:
        return "-inf"
    return format(float(x), ".15g")


@dataclass
class Variable:
    name: str
    lb: float = 0.0
    ub: float = INF
    binary: bool = False
    family: str = ""


@dataclass
class Row:
    name: str
    terms: dict[str, float]
    sense: str  # "<=", ">=", "="
    rhs: float


@dataclass
class LpModel:
    """A linear model held in memory until rendered."""

    name: str
    sense: str = "max"
    variables: dict[str, Variable] = field(default_factory=dict)
    rows: list[Row] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    comments: list[str] = field(default_factory=list)

    def var(self, name: str, family: str, lb: float = 0.0, ub: float = INF, binary: bool = False) -> str:
        if name in self.variables:
            raise KeyError(f"variable {name} defined twice")
        self.variables[name] = Variable(name, lb, ub, binary, family)
        return name

    def fix(self, name: str, value: float) -> None:
        v = self.variables[name]
        v.lb = v.ub = float(value)

    def row(self, name: str, terms, sense: str, rhs: float = 0.0) -> None:
        """Add ``sum(terms) sense rhs``; ``terms`` is a mapping or (coef, var) pairs.

        A ``None`` variable is the all-dead state before the first step and
        contributes nothing.
        """
        merged: dict[str, float] = {}
        items = terms.items() if isinstance(terms, dict) else ((v, c) for c, v in terms)
        for v, c in items:
            if v is not None and c != 0.0:
                merged[v] = merged.get(v, 0.0) + c
        merged = {v: c for v, c in merged.items() if c != 0.0}
        if not merged:
            ok = {"<=": 0.0 <= rhs + 1e-12, ">=": 0.0 >= rhs - 1e-12, "=": abs(rhs) <= 1e-12}[sense]
            if not ok:
                raise ValueError(f"row {name} is a constant contradiction (0 {sense} {rhs})")
            return
        self.rows.append(Row(name, merged, sense, rhs))

    # ------------------------------------------------------------ census
    @property
    def n_vars(self) -> int:
        return len(self.variables)

    @property
    def n_binary(self) -> int:
        return sum(v.binary for v in self.variables.values())

    def family_counts(self) -> dict[str, int]:
        return dict(Counter(v.family for v in self.variables.values()))

    def row_counts(self) -> dict[str, int]:
        return dict(Counter(r.name.split("_", 1)[0] for r in self.rows))

    # ------------------------------------------------------------ rendering
    @staticmethod
    def _expr(terms: dict[str, float]) -> list[str]:
        out = []
        for i, (v, c) in enumerate(terms.items()):
            sign = "-" if c < 0 else ("+" if i else "")
            mag = abs(c)
            coef = "" if mag == 1.0 else _num(mag) + " "
            out.append(f"{sign} {coef}{v}".strip() if sign else f"{coef}{v}")
        return out

    @staticmethod
    def _wrap(head: str, tokens: list[str], width: int = 200) -> list[str]:
        lines, cur = [], head
        for tok in tokens:
            if len(cur) + len(tok) + 1 > width and cur.strip():
                lines.append(cur)
                cur = "   "
            cur += " " + tok
        lines.append(cur)
        return lines

    def to_lp(self) -> str:
        out = [f"\\ {c}" for c in [f"model {self.name}", *self.comments]]
        out.append("Maximize" if self.sense == "max" else "Minimize")
        obj = self._expr(self.objective) if self.objective else ["0 " + next(iter(self.variables))]
        out += self._wrap(" obj:", obj)
        out.append("Subject To")
        for r in self.rows:
            out += self._wrap(f" {r.name}:", self._expr(r.terms) + [r.sense, _num(r.rhs)])
        out.append("Bounds")
        for v in self.variables.values():
            if v.binary and v.lb == 0.0 and v.ub == 1.0:
                continue
            if v.lb == v.ub:
                out.append(f" {v.name} = {_num(v.lb)}")
            elif v.lb == -INF and v.ub == INF:
                out.append(f" {v.name} free")
            else:
                out.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
        bins = [v.name for v in self.variables.values() if v.binary]
        if bins:
            out.append("Binaries")
            out += self._wrap("", bins)
        out.append("End")
        return "\n".join(out) + "\n"

    def write(self, path: str | pathlib.Path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.write_text(self.to_lp(), encoding="ascii")
        return path


# --------------------------------------------------------------------------- builder


class _Builder:
    def __init__(self, inst: Instance, rules: RuleSet):
        self.inst = inst
        self.rules = rules
        self.prm: Params = inst.params
        self.m = LpModel(name=f"{inst.feeder.name}-{inst.scenario.id}-{rules.name}")
        f = inst.feeder
        self.buses = f.bus_ids
        self.phases = {i: f.buses[b].phases for i, b in enumerate(self.buses)}
        self.lines = f.lines
        self.T = inst.T
        self.K = inst.K
        self.bs = list(inst.bs_blocks)
        self.tg = inst.grid.tg_block
        self.bess_blocks = sorted(set(int(k) for k in inst.bess_block))
        self.pairs = list(itertools.combinations(self.bs, 2))
        self.esw = [i for i, ln in enumerate(self.lines) if ln.kind == "ESW"]
        self.ssw = [i for i, ln in enumerate(self.lines) if ln.kind == "SSW"]
        self.f_cap = max(self.prm.f_max, NOMINAL_HZ)
        self.v_cap = self.prm.v_max_sq

    # naming
    @staticmethod
    def n(prefix: str, *idx) -> str:
        return prefix + "".join(f"_{i}" for i in idx)

    def prev(self, name_fn, t):
        """Variable of step t-1, or None (constant zero) before the first step."""
        return None if t == 0 else name_fn(t - 1)

    # ------------------------------------------------------------ variables
    def variables(self) -> None:
        m, inst, T = self.m, self.inst, self.T
        for t in range(T):
            for k in range(self.K):
                m.var(self.n("ubk", k, t), "ubk", 0, 1, True)
                m.var(self.n("f", k, t), "f_block", 0, self.f_cap)
            for b in range(len(self.buses)):
                m.var(self.n("ub", b, t), "ub", 0, 1, True)
                for ph in self.phases[b]:
                    m.var(self.n("v", b, PHASE[ph], t), "v", 0, self.v_cap)
            for b in inst.switch_terminal_buses:
                m.var(self.n("fb", b, t), "f_bus", 0, self.f_cap)
            for li, ln in enumerate(self.lines):
                m.var(self.n("ul", li, t), "ul", 0, 1, True)
                if ln.kind == "ESW":
                    m.var(self.n("uesw", li, t), "uesw", 0, 1, True)
                if ln.kind == "SSW":
                    m.var(self.n("ussw", li, t), "ussw", 0, 1, True)
                for ph in ln.phases:
                    m.var(self.n("pl", li, PHASE[ph], t), "p_line", -INF, INF)
                    m.var(self.n("ql", li, PHASE[ph], t), "q_line", -INF, INF)
            for b in inst.nl_buses:
                m.var(self.n("unl", b, t), "unl", 0, 1, True)
            for c in range(1, len(self.bs) + 1):
                m.var(self.n("uc", c, t), "uc", 0, 1, True)
            for mi in range(len(inst.catalogue)):
                m.var(self.n("um", mi, t), "um", 0, 1, True)
            for k1, k2 in self.pairs:
                m.var(self.n("usync", k1, k2, t), "usync", 0, 1, True)
                if self.prm.strict_frequency_separation:
                    m.var(self.n("usyncm", k1, k2, t), "usync_aux", 0, 1, True)
                    m.var(self.n("usyncp", k1, k2, t), "usync_aux", 0, 1, True)
                for li in self.ssw:
                    m.var(self.n("w", li, k1, k2, t), "mccormick", 0, 1)
            for k in self.bess_blocks:
                m.var(self.n("dfs", k, t), "df_sync", -INF, INF)
            for j in range(len(inst.bess)):
                m.var(self.n("fqss", j, t), "f_qss", 0, self.f_cap)
                m.var(self.n("soc", j, t), "soc", inst.soc_bounds[0][j], inst.soc_bounds[1][j])
                for ph in self.phases[int(inst.bess_bus[j])]:
                    m.var(self.n("pbess", j, PHASE[ph], t), "p_bess", -INF, INF)
                    m.var(self.n("qbess", j, PHASE[ph], t), "q_bess", -INF, INF)
            if inst.tg_bus is not None:
                for ph in self.phases[inst.tg_bus]:
                    m.var(self.n("ptg", PHASE[ph], t), "p_tg", -INF, INF)
                    m.var(self.n("qtg", PHASE[ph], t), "q_tg", -INF, INF)
            for b in np.flatnonzero(inst.is_cl):
                for ph in self.phases[b]:
                    m.var(self.n("pcl", b, PHASE[ph], t), "p_cl", -INF, INF)
                    m.var(self.n("qcl", b, PHASE[ph], t), "q_cl", -INF, INF)
            for b in inst.nl_buses:
                for ph in self.phases[b]:
                    m.var(self.n("pnl", b, PHASE[ph], t), "p_nl", -INF, INF)
                    m.var(self.n("qnl", b, PHASE[ph], t), "q_nl", -INF, INF)
            for b in np.flatnonzero(inst.pv_rating.sum(axis=1) > 0):
                for ph in self.phases[b]:
                    m.var(self.n("ppv", b, PHASE[ph], t), "p_pv", -INF, INF)
                    m.var(self.n("qpv", b, PHASE[ph], t), "q_pv", -INF, INF)

    # ------------------------------------------------------------ data-driven fixings
    def fixings(self) -> None:
        m, inst = self.m, self.inst
        dmg = inst.scenario.damaged
        for t in range(self.T):
            for k in self.bess_blocks:
                m.fix(self.n("ubk", k, t), 1)
            if self.tg is not None:
                m.fix(self.n("ubk", self.tg, t), int(inst.u_tg[t]))
            if dmg is not None:
                m.fix(self.n("ubk", dmg, t), 0)
            if t == 0:
                for k in range(self.K):
                    if k not in self.bess_blocks and k != self.tg:
                        m.fix(self.n("ubk", k, t), 0)
            active = set(inst.active_bs(t))
            for mi, mode in enumerate(inst.catalogue.modes):
                if set(mode.blocks) != active:
                    m.fix(self.n("um", mi, t), 0)
            for k1, k2 in self.pairs:
                if not ({k1, k2} <= active):
                    m.fix(self.n("usync", k1, k2, t), 0)

    # ------------------------------------------------------------ objective
    def objective(self) -> None:
        inst, prm = self.inst, self.prm
        obj = self.m.objective
        for t in range(self.T):
            for b in np.flatnonzero(inst.is_cl):
                for ph in self.phases[b]:
                    obj[self.n("pcl", b, PHASE[ph], t)] = inst.dt_min * prm.alpha_cl
            for b in inst.nl_buses:
                for ph in self.phases[b]:
                    obj[self.n("pnl", b, PHASE[ph], t)] = inst.dt_min * prm.alpha_nl

    # ------------------------------------------------------------ energization and switching
    def energization(self) -> None:
        m, inst, n = self.m, self.inst, self.n
        ends = inst.line_ends
        part = inst.grid.partition
        lp = inst.feeder.line_pos
        for t in range(self.T):
            for k in range(self.K):
                ubk = n("ubk", k, t)
                m.row(n("eq25a", k, t), [(1, ubk), (-1, self.prev(lambda s: n("ubk", k, s), t))], ">=")
                for b in inst.block_buses[k]:
                    m.row(n("eq25b", k, b, t), [(1, ubk), (-1, n("ub", b, t))], "=")
                for li in inst.block_ln_lines[k]:
                    m.row(n("eq25c", k, li, t), [(1, ubk), (-1, n("ul", li, t))], "=")
                esw_k = [lp[i] for i in part.esw_lines[k]]
                for li in esw_k:
                    m.row(n("eq25d", k, li, t), [(1, ubk), (-1, n("uesw", li, t))], ">=")
                if esw_k:
                    terms = [(1, n("uesw", li, t)) for li in esw_k]
                    if t > 0:
                        terms += [(-1, n("uesw", li, t - 1)) for li in esw_k]
                        terms.append((-int(inst.esw_m[k]), n("ubk", k, t - 1)))
                    m.row(n("eq25e", k, t), terms, "<=", 1)
                if k not in self.bs:
                    # a block only comes alive through a switch closed in the same step
                    terms = [(1, ubk), (-1, self.prev(lambda s: n("ubk", k, s), t))]
                    terms += [(-1, n("uesw", li, t)) for li in esw_k]
                    if t > 0:
                        terms += [(1, n("uesw", li, t - 1)) for li in esw_k]
                    m.row(n("bssource", k, t), terms, "<=")
            for li in self.esw:
                a, b = (int(x) for x in ends[li])
                u, up = n("uesw", li, t), self.prev(lambda s: n("uesw", li, s), t)
                pa, pb = self.prev(lambda s: n("ub", a, s), t), self.prev(lambda s: n("ub", b, s), t)
                m.row(n("eq26a", li, t), [(1, u), (-1, pa), (-1, pb)], "<=")
                m.row(n("eq26b", li, t), [(1, u), (-1, up), (1, pa), (1, pb)], "<=", 2)
                m.row(n("eswmono", li, t), [(1, u), (-1, up)], ">=")
                m.row(n("linestate", li, t), [(1, n("ul", li, t)), (-1, u)], "=")
            for li in self.ssw:
                a, b = (int(x) for x in ends[li])
                u, up = n("ussw", li, t), self.prev(lambda s: n("ussw", li, s), t)
                pa, pb = self.prev(lambda s: n("ub", a, s), t), self.prev(lambda s: n("ub", b, s), t)
                m.row(n("eq27a", li, t), [(1, u), (-1, up)], ">=")
                m.row(n("eq27b", li, t), [(2, u), (-1, pa), (-1, pb)], "<=")
                m.row(n("linestate", li, t), [(1, n("ul", li, t)), (-1, u)], "=")
                if self.rules.ssw_lockout and not inst.u_tg[t]:
                    m.row(n("rrlockout", li, t), [(1, u)], "=")
            # radiality: lines = buses - s_t with s_t = |BESS blocks| + u_TG - closed SSWs
            terms = [(1, n("ul", li, t)) for li in range(len(self.lines))]
            terms += [(-1, n("ub", b, t)) for b in range(len(self.buses))]
            terms += [(-1, n("ussw", li, t)) for li in self.ssw]
            m.row(n("eq28a", t), terms, "=", -(len(self.bess_blocks) + int(inst.u_tg[t])))
            # class and mode selection
            classes = range(1, len(self.bs) + 1)
            if len(self.bs):
                terms = [(c, n("uc", c, t)) for c in classes] + [(1, n("ussw", li, t)) for li in self.ssw]
                m.row(n("eq20a", t), terms, "=", len(self.bess_blocks) + int(inst.u_tg[t]))
                m.row(n("eq20b", t), [(1, n("uc", c, t)) for c in classes], "=", 1)
                for c in classes:
                    terms = [(1, n("um", mi, t)) for mi, mode in enumerate(inst.catalogue.modes) if mode.klass == c]
                    m.row(n("eq21", c, t), terms + [(-1, n("uc", c, t))], "=")

    # ------------------------------------------------------------ synchronization
    def synchronization(self) -> None:
        m, inst, n, prm = self.m, self.inst, self.n, self.prm
        eps, fc = prm.sync_eps, self.f_cap
        for t in range(self.T):
            for k1, k2 in self.pairs:
                u = n("usync", k1, k2, t)
                up = self.prev(lambda s: n("usync", k1, k2, s), t)
                m.row(n("eq22a", k1, k2, t), [(1, u), (-1, up)], ">=")
                diff = [(1, n("f", k2, t)), (-1, n("f", k1, t))]
                mu = prm.mu_offset
                if prm.strict_frequency_separation:
                    lo, hi = n("usyncm", k1, k2, t), n("usyncp", k1, k2, t)
                    m.row(n("eq22b", k1, k2, t), [(1, lo), (1, u), (1, hi)], "=", 1)
                    m.row(n("eq22c", k1, k2, t), [(2 * eps, lo), (-eps, u), (-fc, hi)] + [(-c, v) for c, v in diff],
                          "<=", mu)
                    m.row(n("eq22d", k1, k2, t), [(fc, lo), (eps, u), (-2 * eps, hi)] + [(-c, v) for c, v in diff],
                          ">=", mu)
                else:
                    # matched frequencies whenever the pair is synchronized
                    m.row(n("eq22c", k1, k2, t), diff + [(fc, u)], "<=", eps + fc - mu)
                    m.row(n("eq22d", k1, k2, t), diff + [(-fc, u)], ">=", -eps - fc - mu)
                for mi, mode in enumerate(inst.catalogue.modes):
                    if not {k1, k2} <= set(mode.blocks):
                        continue
                    um = n("um", mi, t)
                    if mode.same_part(k1, k2):
                        m.row(n("eq23", k1, k2, mi, t), [(1, u), (-1, um)], ">=")
                    else:
                        m.row(n("eq23", k1, k2, mi, t), [(1, u), (1, um)], "<=", 1)
                # McCormick products of newly closed SSWs and sync indicators
                for li in self.ssw:
                    w = n("w", li, k1, k2, t)
                    d = [(1, n("ussw", li, t)), (-1, self.prev(lambda s: n("ussw", li, s), t))]
                    m.row(n("mc1", li, k1, k2, t), [(1, w)] + [(-c, v) for c, v in d], "<=")
                    m.row(n("mc2", li, k1, k2, t), [(1, w), (-1, u)], "<=")
                    m.row(n("mc3", li, k1, k2, t), [(1, w), (-1, u)] + [(-c, v) for c, v in d], ">=", -1)
            if self.rules.sync_safety and len(self.bs) >= 3:
                for k in self.bs:
                    others = [x for x in self.bs if x != k]
                    for k1, k2 in itertools.combinations(others, 2):
                        a = self._pair(k, k1)
                        b = self._pair(k, k2)
                        c = self._pair(k1, k2)
                        terms = [(1, n("usync", *a, t)), (1, n("usync", *b, t))]
                        if t > 0:
                            terms += [(-1, n("usync", *a, t - 1)), (-1, n("usync", *b, t - 1)),
                                      (-1, n("usync", *c, t - 1))]
                        m.row(n("eq24", k, k1, k2, t), terms, "<=", 1)

    @staticmethod
    def _pair(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    # ------------------------------------------------------------ frequency
    def frequency(self) -> None:
        m, inst, n, prm = self.m, self.inst, self.n, self.prm
        fc = self.f_cap
        bus_block = inst.bus_block
        ends = inst.line_ends
        for t in range(self.T):
            if self.tg is not None:
                m.row(n("eq13", t), [(1, n("f", self.tg, t))], "=", NOMINAL_HZ * int(inst.u_tg[t]))
            for j in range(len(inst.bess)):
                k = int(inst.bess_block[j])
                S, D = float(inst.bess_s[j]), float(inst.bess_droop[j])
                ph = self.phases[int(inst.bess_bus[j])]
                ptot = [(1.0, n("pbess", j, PHASE[p], t)) for p in ph]
                m.row(n("eq14a", j, t), [(1, n("fqss", j, t))] + [(D / S, v) for _, v in ptot], "=", NOMINAL_HZ)
                m.row(n("eq14", j, t), [(1, n("f", k, t)), (-1, n("fqss", j, t)), (-1, n("dfs", k, t))], "=")
                m.row(n("eq15qss", j, t), [(1, n("fqss", j, t))], ">=", prm.f_qss_min)
                m.row(n("eq15qss", j, t, "u"), [(1, n("fqss", j, t))], "<=", prm.f_qss_max)
                m.row(n("eq15f", k, j, t), [(1, n("f", k, t))], ">=", prm.f_min)
                m.row(n("eq15f", k, j, t, "u"), [(1, n("f", k, t))], "<=", prm.f_max)
                # step-load indices from the change in BESS output
                step = list(ptot)
                if t > 0:
                    step += [(-1.0, n("pbess", j, PHASE[p], t - 1)) for p in ph]
                m.row(n("eq15rocof", j, t), [(prm.rocof_gain / S * c, v) for c, v in step], "<=", prm.rocof_max)
                m.row(n("eq15nadir", j, t), [(prm.nadir_gain / S * c, v) for c, v in step], "<=",
                      NOMINAL_HZ - prm.nadir_min)
            # frequency offset only when a synchronization event involves the block
            for k in self.bess_blocks:
                terms = []
                for k1, k2 in self.pairs:
                    if k in (k1, k2):
                        terms += [(1, n("w", li, k1, k2, t)) for li in self.ssw]
                dfs = n("dfs", k, t)
                m.row(n("eq14b", k, t), [(1, dfs)] + [(-fc, v) for _, v in terms], "<=")
                m.row(n("eq14b", k, t, "l"), [(1, dfs)] + [(fc, v) for _, v in terms], ">=")
            for b in inst.switch_terminal_buses:
                m.row(n("eq16", b, t), [(1, n("fb", b, t)), (-1, n("f", int(bus_block[b]), t))], "=")
            for li in self.esw + self.ssw:
                a, b = (int(x) for x in ends[li])
                u = n("uesw" if li in self.esw else "ussw", li, t)
                tag = "eq17" if li in self.esw else "eq18"
                tol = 0.0 if li in self.esw else prm.sync_eps
                diff = [(1, n("fb", a, t)), (-1, n("fb", b, t))]
                m.row(n(tag, li, t), diff + [(fc, u)], "<=", fc + tol)
                m.row(n(tag, li, t, "l"), diff + [(-fc, u)], ">=", -fc - tol)

    # ------------------------------------------------------------ sources and loads
    def _cap(self, tag: str, p: str, q: str, radius: float) -> None:
        for i, (c, s) in enumerate(_OCTAGON):
            self.m.row(f"{tag}_{i}", [(c, p), (s, q)], "<=", radius * _APOTHEM)

    def sources(self) -> None:
        m, inst, n = self.m, self.inst, self.n
        for t in range(self.T):
            if inst.tg_bus is not None:
                R = int(inst.u_tg[t]) * inst.tg_s / 3.0
                for ph in self.phases[inst.tg_bus]:
                    self._cap(n("eq29", PHASE[ph], t), n("ptg", PHASE[ph], t), n("qtg", PHASE[ph], t), R)
            for j in range(len(inst.bess)):
                R = float(inst.bess_s[j]) / 3.0
                ph = self.phases[int(inst.bess_bus[j])]
                for p in ph:
                    self._cap(n("eq30a", j, PHASE[p], t), n("pbess", j, PHASE[p], t), n("qbess", j, PHASE[p], t), R)
                terms = [(1, n("soc", j, t))] + [(inst.dt_h / float(inst.bess_e[j]), n("pbess", j, PHASE[p], t))
                                                 for p in ph]
                prev = n("soc", j, t - 1) if t else None
                if prev is None:
                    m.row(n("eq30b", j, t), terms, "=", float(inst.soc0[j]))
                else:
                    m.row(n("eq30b", j, t), terms + [(-1, prev)], "=")

    def loads(self) -> None:
        m, inst, n, prm = self.m, self.inst, self.n, self.prm
        beta = [float(x) - 1.0 for x in inst.clpu[:3]]
        bus_block = inst.bus_block
        delay = prm.pv_delay
        for t in range(self.T):
            for kind, buses in (("cl", np.flatnonzero(inst.is_cl)), ("nl", inst.nl_buses)):
                for b in buses:
                    k = int(bus_block[b])
                    u = (lambda s, b=b, k=k: n("ubk", k, s)) if kind == "cl" else (lambda s, b=b: n("unl", b, s))
                    # multiplier = u_t + sum_o beta_o * (u_{t-o+1} - u_{t-o})
                    mult: dict[str | None, float] = {u(t): 1.0}
                    for o in range(1, 4):
                        s = t - (o - 1)
                        if s < 0:
                            continue
                        mult[u(s)] = mult.get(u(s), 0.0) + beta[o - 1]
                        if s - 1 >= 0:
                            mult[u(s - 1)] = mult.get(u(s - 1), 0.0) - beta[o - 1]
                    tan = float(inst.tan_load[b])
                    for ph in self.phases[b]:
                        p_var = n("p" + kind, b, PHASE[ph], t)
                        p_ld = float(inst.p_ld[t, b, ph])
                        m.row(n("eq32" if kind == "cl" else "eq33", b, PHASE[ph], t),
                              [(1, p_var)] + [(-p_ld * c, v) for v, c in mult.items()], "=")
                        m.row(n("eq32q" if kind == "cl" else "eq33q", b, PHASE[ph], t),
                              [(1, n("q" + kind, b, PHASE[ph], t)), (-tan, p_var)], "=")
                    if kind == "nl":
                        m.row(n("eq33c", b, t), [(1, n("unl", b, t)), (-1, n("ubk", k, t))], "<=")
                        if t:
                            m.row(n("eq33d", b, t), [(1, n("unl", b, t)), (-1, n("unl", b, t - 1))], ">=")
            for b in np.flatnonzero(inst.pv_rating.sum(axis=1) > 0):
                k = int(bus_block[b])
                src = n("ubk", k, t - delay) if t - delay >= 0 else None
                for ph in self.phases[b]:
                    p_var = n("ppv", b, PHASE[ph], t)
                    rating = float(inst.eta[t] * inst.pv_rating[b, ph])
                    terms = [(1, p_var)] + ([(-rating, src)] if src is not None else [])
                    m.row(n("eq31", b, PHASE[ph], t), terms, "=")
                    m.row(n("eq31q", b, PHASE[ph], t), [(1, n("qpv", b, PHASE[ph], t)),
                                                         (-float(inst.tan_pv[b]), p_var)], "=")

    # ------------------------------------------------------------ network
    def network(self) -> None:
        m, inst, n, prm = self.m, self.inst, self.n, self.prm
        arrays_r, arrays_x = inst.r, inst.x
        ends = inst.line_ends
        has_cl = set(np.flatnonzero(inst.is_cl).tolist())
        has_nl = set(int(b) for b in inst.nl_buses)
        has_pv = set(np.flatnonzero(inst.pv_rating.sum(axis=1) > 0).tolist())
        bess_at = {int(b): j for j, b in enumerate(inst.bess_bus)}
        p_max, q_max = inst.p_max, inst.q_max
        incident: dict[int, list[tuple[int, int]]] = {b: [] for b in range(len(self.buses))}
        for li, (a, c) in enumerate(ends):
            incident[int(a)].append((li, 1))
            incident[int(c)].append((li, -1))
        for t in range(self.T):
            for b in range(len(self.buses)):
                for ph in self.phases[b]:
                    P = PHASE[ph]
                    for chi in ("p", "q"):
                        terms: list = [(sgn, n(chi + "l", li, P, t)) for li, sgn in incident[b]
                                       if ph in self.lines[li].phases]
                        if b == inst.tg_bus:
                            terms.append((-1, n(chi + "tg", P, t)))
                        if b in bess_at:
                            terms.append((-1, n(chi + "bess", bess_at[b], P, t)))
                        if b in has_pv:
                            terms.append((-1, n(chi + "pv", b, P, t)))
                        if b in has_cl:
                            terms.append((1, n(chi + "cl", b, P, t)))
                        if b in has_nl:
                            terms.append((1, n(chi + "nl", b, P, t)))
                        m.row(n("eq34" + chi, b, P, t), terms, "=")
                    v = n("v", b, P, t)
                    ub = n("ub", b, t)
                    m.row(n("eq36b", b, P, t), [(1, v), (-prm.v_min_sq, ub)], ">=")
                    m.row(n("eq36b", b, P, t, "u"), [(1, v), (-prm.v_max_sq, ub)], "<=")
            if inst.tg_bus is not None and inst.u_tg[t]:
                for ph in self.phases[inst.tg_bus]:
                    m.row(n("vroot", PHASE[ph], t), [(1, n("v", inst.tg_bus, PHASE[ph], t))], "=", prm.v_root)
            for li, ln in enumerate(self.lines):
                a, c = (int(x) for x in ends[li])
                ul = n("ul", li, t)
                ph = list(ln.phases)
                for p in ph:
                    P = PHASE[p]
                    drop = [(2 * arrays_r[li, p, q], n("pl", li, PHASE[q], t)) for q in ph]
                    drop += [(2 * arrays_x[li, p, q], n("ql", li, PHASE[q], t)) for q in ph]
                    base = [(1, n("v", c, P, t)), (-1, n("v", a, P, t))] + drop
                    m.row(n("eq35", li, P, t), base + [(self.v_cap, ul)], "<=", self.v_cap)
                    m.row(n("eq35", li, P, t, "l"), base + [(-self.v_cap, ul)], ">=", -self.v_cap)
                    for chi, cap in (("p", p_max[li, p]), ("q", q_max[li, p])):
                        var = n(chi + "l", li, P, t)
                        m.row(n("eq36a", li, chi, P, t), [(1, var), (-float(cap), ul)], "<=")
                        m.row(n("eq36a", li, chi, P, t, "l"), [(1, var), (float(cap), ul)], ">=")
                        if ln.kind == "SSW":
                            d = [(1, n("ussw", li, t)), (-1, self.prev(lambda s: n("ussw", li, s), t))]
                            m.row(n("eq19", li, chi, P, t), [(1, var)] + [(float(cap) * c, v) for c, v in d],
                                  "<=", float(cap))
                            m.row(n("eq19", li, chi, P, t, "l"), [(1, var)] + [(-float(cap) * c, v) for c, v in d],
                                  ">=", -float(cap))

    def build(self) -> LpModel:
        self.variables()
        self.fixings()
        self.objective()
        self.energization()
        self.synchronization()
        self.frequency()
        self.sources()
        self.loads()
        self.network()
        inst = self.inst
        self.m.comments += [
            f"feeder digest {inst.digest()}",
            f"scenario {inst.scenario.id} horizon {inst.T} dt_min {inst.dt_min}",
            f"rules {self.rules.name}",
            "apparent-power caps use an inscribed regular octagon",
        ]
        return self.m


def export_model(feeder, scenario=None, rules: RuleSet = SSDMGF, params: Params | None = None) -> LpModel:
    """Build the mixed-integer linear model of one restoration instance."""
    from .optimizer import make_instance

    inst = make_instance(feeder, scenario, params)
    return _Builder(inst, rules).build()
