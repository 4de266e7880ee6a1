"""Restoration plans: data model, objective, component models and the
constraint validator."""

from __future__ import annotations

import csv
import itertools
import json
import pathlib
from dataclasses import dataclass, field, fields
from typing import Any, Sequence

import numpy as np

from .config import DEFAULT_PARAMS, NOMINAL_HZ, SSDMGF, Params, RuleSet
from .context import Instance
from .powerflow import balance_check, security_check, voltage_drop_check
from .report import Violation, ViolationReport
from .scenario import Scenario
from .sync_structure import ModeCatalogue, check_transition_safety
from .topology import Feeder, Grid
from .unionfind import DisjointSet

BINARY_FIELDS = ("u_tg", "u_bk", "u_b", "u_line", "u_nlb", "u_class", "u_mode", "u_sync", "s")
REAL_FIELDS = (
    "f_block", "f_bus", "f_qss", "df_sync",
    "p_tg", "q_tg", "p_bess", "q_bess", "p_pv", "q_pv", "p_cl", "q_cl", "p_nl", "q_nl",
    "p_line", "q_line", "v", "soc",
)


class PlanShapeError(ValueError):
    pass


@dataclass(eq=False)
class RestorationPlan:
    """Time-indexed trajectories of every decision variable.

    Index conventions: blocks by id, buses and lines by position in the feeder,
    BS blocks by ascending id, batteries in feeder order, modes in catalogue
    order and classes as ``c - 1``.
    """

    dt_min: float
    u_tg: np.ndarray  # [T]
    u_bk: np.ndarray  # [T, K]
    u_b: np.ndarray  # [T, Nb]
    u_line: np.ndarray  # [T, Nl]
    u_nlb: np.ndarray  # [T, Nb]
    u_class: np.ndarray  # [T, C]
    u_mode: np.ndarray  # [T, M]
    u_sync: np.ndarray  # [T, nBS, nBS]
    s: np.ndarray  # [T]
    f_block: np.ndarray  # [T, K]
    f_bus: np.ndarray  # [T, Nb]
    f_qss: np.ndarray  # [T, nBESS]
    df_sync: np.ndarray  # [T, nBESS]
    p_tg: np.ndarray  # [T, 3]
    q_tg: np.ndarray
    p_bess: np.ndarray  # [T, nBESS, 3]
    q_bess: np.ndarray
    p_pv: np.ndarray  # [T, Nb, 3]
    q_pv: np.ndarray
    p_cl: np.ndarray
    q_cl: np.ndarray
    p_nl: np.ndarray
    q_nl: np.ndarray
    p_line: np.ndarray  # [T, Nl, 3]
    q_line: np.ndarray
    v: np.ndarray  # [T, Nb, 3]
    soc: np.ndarray  # [T, nBESS]
    soc0: np.ndarray  # [nBESS]
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def T(self) -> int:
        return int(self.u_bk.shape[0])

    @classmethod
    def empty(cls, inst: Instance) -> "RestorationPlan":
        T, K, nb, nl = inst.T, inst.K, inst.n_bus, inst.n_line
        nbs, nbe = len(inst.bs_blocks), len(inst.bess)
        C, M = max(1, len(inst.bs_blocks)), len(inst.catalogue)
        i8 = np.int8
        return cls(
            dt_min=inst.dt_min,
            u_tg=np.array(inst.u_tg, dtype=i8),
            u_bk=np.zeros((T, K), i8),
            u_b=np.zeros((T, nb), i8),
            u_line=np.zeros((T, nl), i8),
            u_nlb=np.zeros((T, nb), i8),
            u_class=np.zeros((T, C), i8),
            u_mode=np.zeros((T, M), i8),
            u_sync=np.zeros((T, nbs, nbs), i8),
            s=np.zeros(T, dtype=int),
            f_block=np.zeros((T, K)),
            f_bus=np.zeros((T, nb)),
            f_qss=np.zeros((T, nbe)),
            df_sync=np.zeros((T, nbe)),
            p_tg=np.zeros((T, 3)),
            q_tg=np.zeros((T, 3)),
            p_bess=np.zeros((T, nbe, 3)),
            q_bess=np.zeros((T, nbe, 3)),
            p_pv=np.zeros((T, nb, 3)),
            q_pv=np.zeros((T, nb, 3)),
            p_cl=np.zeros((T, nb, 3)),
            q_cl=np.zeros((T, nb, 3)),
            p_nl=np.zeros((T, nb, 3)),
            q_nl=np.zeros((T, nb, 3)),
            p_line=np.zeros((T, nl, 3)),
            q_line=np.zeros((T, nl, 3)),
            v=np.zeros((T, nb, 3)),
            soc=np.zeros((T, nbe)),
            soc0=np.array(inst.soc0, dtype=float),
        )

    def copy(self) -> "RestorationPlan":
        kw = {f.name: (getattr(self, f.name).copy() if isinstance(getattr(self, f.name), np.ndarray)
                       else getattr(self, f.name)) for f in fields(self)}
        kw["meta"] = dict(self.meta)
        return RestorationPlan(**kw)

    def u_kind(self, inst: Instance, kind: str) -> np.ndarray:
        idx = [i for i, k in enumerate(inst.line_kind) if k == kind]
        return self.u_line[:, idx]

    # ------------------------------------------------------------ persistence
    def save(self, directory: str | pathlib.Path, manifest_extra: dict | None = None) -> pathlib.Path:
        """One CSV per variable (rows = steps, flattened columns) plus manifest.json.

        A path ending in ``.csv`` instead gets a single long-format table.
        """
        out = pathlib.Path(directory)
        if out.suffix == ".csv":
            return self._save_long(out, manifest_extra)
        out.mkdir(parents=True, exist_ok=True)
        for name in BINARY_FIELDS + REAL_FIELDS:
            arr = np.asarray(getattr(self, name))
            flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(-1, 1)
            cols = ["t"] + ["_".join(map(str, idx)) for idx in itertools.product(*map(range, arr.shape[1:]))]
            with open(out / f"{name}.csv", "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(cols if arr.ndim > 1 else ["t", name])
                for t, row in enumerate(flat):
                    w.writerow([t] + [repr(float(x)) if name in REAL_FIELDS else int(x) for x in row])
        manifest = self._manifest(manifest_extra)
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
        return out

    @classmethod
    def load(cls, directory: str | pathlib.Path) -> "RestorationPlan":
        src = pathlib.Path(directory)
        if not src.exists():
            raise FileNotFoundError(f"no plan at {src}")
        if src.is_file():
            return cls._load_long(src)
        manifest = json.loads((src / "manifest.json").read_text(encoding="utf-8"))
        kw: dict[str, Any] = {}
        for name in BINARY_FIELDS + REAL_FIELDS:
            shape = manifest["shapes"][name]
            with open(src / f"{name}.csv", newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))[1:]
            data = np.array([[float(x) for x in r[1:]] for r in rows], dtype=float)
            data = data.reshape(shape) if data.size else np.zeros(shape)
            if name in BINARY_FIELDS:
                data = data.astype(int if name == "s" else np.int8)
            kw[name] = data
        return cls(dt_min=float(manifest["dt_min"]), soc0=np.array(manifest["soc0"], dtype=float),
                   meta=_meta_of(manifest), **kw)

    def _manifest(self, extra: dict | None) -> dict:
        manifest = {
            "horizon": self.T,
            "dt_min": self.dt_min,
            "soc0": [float(x) for x in self.soc0],
            "shapes": {name: list(np.shape(getattr(self, name))) for name in BINARY_FIELDS + REAL_FIELDS},
            "meta": self.meta,
        }
        if extra:
            manifest.update(extra)
        return manifest

    def _save_long(self, path: pathlib.Path, extra: dict | None) -> pathlib.Path:
        # first line: '# ' + manifest JSON; then variable,t,index,value rows (nonzero entries only)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("# " + json.dumps(self._manifest(extra), default=str) + "\n")
            w = csv.writer(fh)
            w.writerow(["variable", "t", "index", "value"])
            for name in BINARY_FIELDS + REAL_FIELDS:
                arr = np.asarray(getattr(self, name))
                for idx in zip(*np.nonzero(arr)):
                    value = arr[idx]
                    w.writerow([name, idx[0], "_".join(map(str, idx[1:])),
                                repr(float(value)) if name in REAL_FIELDS else int(value)])
        return path

    @classmethod
    def _load_long(cls, path: pathlib.Path) -> "RestorationPlan":
        with open(path, newline="", encoding="utf-8") as fh:
            head = fh.readline()
            if not head.startswith("# "):
                raise PlanShapeError(f"{path}: missing manifest header line")
            manifest = json.loads(head[2:])
            rows = list(csv.DictReader(fh))
        kw: dict[str, Any] = {}
        for name in BINARY_FIELDS + REAL_FIELDS:
            dtype = float if name in REAL_FIELDS else (int if name == "s" else np.int8)
            kw[name] = np.zeros(manifest["shapes"][name], dtype=dtype)
        for r in rows:
            name = r["variable"]
            if name not in kw:
                raise PlanShapeError(f"{path}: unknown variable {name!r}")
            idx = (int(r["t"]),) + tuple(int(i) for i in r["index"].split("_") if i != "")
            kw[name][idx] = float(r["value"])
        return cls(dt_min=float(manifest["dt_min"]), soc0=np.array(manifest["soc0"], dtype=float),
                   meta=_meta_of(manifest), **kw)


def _meta_of(manifest: dict) -> dict:
    """Plan metadata, with any extra manifest keys written at save time folded in."""
    meta = dict(manifest.get("meta", {}))
    for key, value in manifest.items():
        if key not in _MANIFEST_KEYS:
            meta.setdefault(key, value)
    return meta


_MANIFEST_KEYS = {"horizon", "dt_min", "soc0", "shapes", "meta"}


# --------------------------------------------------------------------------- component models


def objective_value(plan: RestorationPlan, alpha_cl: float = 10.0, alpha_nl: float = 1.0) -> float:
    """Weighted restored energy: sum over t of dt (a_CL * CL demand + a_NL * NL demand)."""
    per_step = alpha_cl * plan.p_cl.sum(axis=(1, 2)) + alpha_nl * plan.p_nl.sum(axis=(1, 2))
    return float(plan.dt_min * per_step.sum())


def radiality_terms(plan: RestorationPlan, t: int, n_bess_blocks: int, ssw_index: Sequence[int]) -> tuple[int, int, int]:
    """(energized lines, energized buses, s_t) where s_t = |BESS blocks| + u_TG - closed SSWs."""
    s_t = n_bess_blocks + int(plan.u_tg[t]) - int(plan.u_line[t, list(ssw_index)].sum())
    return int(plan.u_line[t].sum()), int(plan.u_b[t].sum()), s_t


def clpu_demand(p_ld: np.ndarray, u: np.ndarray, beta: Sequence[float], tan_phi: float = 0.0):
    """Staircase cold-load-pickup demand.

    ``p_ld`` has time as its first axis; ``u`` is the 0/1 energization history
    over the same steps (the step before the first is taken as de-energized).
    """
    p_ld = np.asarray(p_ld, dtype=float)
    u = np.asarray(u, dtype=float)
    du = np.diff(np.concatenate([[0.0], u]))
    mult = u.copy()
    for o, b in enumerate(beta):
        shifted = np.concatenate([np.zeros(o), du[: len(du) - o]])
        mult = mult + b * shifted
    mult = mult.reshape((-1,) + (1,) * (p_ld.ndim - 1))
    p = p_ld * mult
    return p, p * tan_phi


def bess_step(soc_prev: float, p: Sequence[float], dt_h: float, e_nom: float,
              bounds: tuple[float, float] = (0.2, 1.0)) -> tuple[float, bool]:
    """Next state of charge and whether it lies within ``bounds``."""
    if e_nom == 0:
        raise ValueError("BESS energy capacity must be non-zero")
    soc = soc_prev - float(np.sum(p)) * dt_h / e_nom
    return soc, bounds[0] - 1e-12 <= soc <= bounds[1] + 1e-12


def pv_output(u_bk: np.ndarray, eta: np.ndarray, s_nom: float, tan_phi: float,
              phases: Sequence[int] = (0, 1, 2), delay: int = 1):
    """Per-phase PV (p, q) over time; output follows energization after ``delay`` steps."""
    u_bk = np.asarray(u_bk, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lagged = np.concatenate([np.zeros(delay), u_bk[: len(u_bk) - delay]]) if delay else u_bk
    p = np.zeros((len(u_bk), 3))
    p[:, list(phases)] = (lagged * eta * s_nom / 3.0)[:, None]
    return p, p * tan_phi


@dataclass(frozen=True)
class FrequencySurrogate:
    """Droop-type stand-in for the grid-forming inverter frequency indices."""

    droop: np.ndarray  # Hz per p.u. of rating, per BESS
    rating: np.ndarray
    params: Params = DEFAULT_PARAMS

    @classmethod
    def of(cls, inst: Instance) -> "FrequencySurrogate":
        return cls(inst.bess_droop, inst.bess_s, inst.params)

    def qss(self, p_total: np.ndarray) -> np.ndarray:
        return NOMINAL_HZ - self.droop * np.asarray(p_total) / self.rating

    def step_load(self, p_total: np.ndarray, p_prev: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, np.asarray(p_total) - np.asarray(p_prev)) / self.rating

    def rocof(self, p_total, p_prev) -> np.ndarray:
        return self.params.rocof_gain * self.step_load(p_total, p_prev)

    def nadir(self, p_total, p_prev) -> np.ndarray:
        return NOMINAL_HZ - self.params.nadir_gain * self.step_load(p_total, p_prev)


def sync_delta(inst: Instance, plan: RestorationPlan, t: int) -> np.ndarray:
    """delta^sync per BESS: (number of SSWs closing at t) x (number of sync partners)."""
    ssw = list(inst.ssw_lines)
    closing = 0
    if ssw:
        prev = plan.u_line[t - 1, ssw] if t > 0 else np.zeros(len(ssw))
        closing = int((plan.u_line[t, ssw] - prev).clip(min=0).sum())
    out = np.zeros(len(inst.bess))
    for j, k in enumerate(inst.bess_block):
        i = inst.bs_pos[int(k)]
        out[j] = closing * int(plan.u_sync[t, i].sum() - plan.u_sync[t, i, i])
    return out


def frequency_trajectory(inst: Instance, plan: RestorationPlan):
    """Recompute block/bus frequencies from the plan's dispatch and sync events.

    Returns ``(f_block, f_bus, report)``; the report lists frequency-security
    violations of the recomputed trajectory.
    """
    sur = FrequencySurrogate.of(inst)
    T = plan.T
    f_block = np.zeros((T, inst.K))
    f_bus = np.zeros((T, inst.n_bus))
    report = ViolationReport()
    p_prev = np.zeros(len(inst.bess))
    for t in range(T):
        p_tot = plan.p_bess[t].sum(axis=1)
        qss = sur.qss(p_tot)
        delta = sync_delta(inst, plan, t)
        f_src = qss + delta * plan.df_sync[t]
        dsu = DisjointSet(range(inst.K))
        for li, (ka, kb) in enumerate(inst.line_block_pair):
            if inst.line_kind[li] != "LN" and plan.u_line[t, li]:
                dsu.union(int(ka), int(kb))
        island_f: dict[int, float] = {}
        if inst.grid.tg_block is not None and plan.u_tg[t]:
            island_f[dsu.find(inst.grid.tg_block)] = NOMINAL_HZ
        for j, k in enumerate(inst.bess_block):
            island_f.setdefault(dsu.find(int(k)), float(f_src[j]))
        for k in range(inst.K):
            if plan.u_bk[t, k]:
                f_block[t, k] = island_f.get(dsu.find(k), 0.0)
        if inst.grid.tg_block is not None:
            f_block[t, inst.grid.tg_block] = NOMINAL_HZ * plan.u_tg[t]
        for j, k in enumerate(inst.bess_block):
            f_block[t, k] = f_src[j]
        f_bus[t] = f_block[t, inst.bus_block]
        report.extend(_frequency_security(inst, sur, t, plan.u_bk[t], f_block[t], qss, p_tot, p_prev))
        p_prev = p_tot
    return f_block, f_bus, report


def _frequency_security(inst, sur, t, u_bk, f_block, qss, p_tot, p_prev) -> ViolationReport:
    prm = inst.params
    tol = prm.tol
    out = ViolationReport()
    for k in range(inst.K):
        if u_bk[k] and not (prm.f_min - tol <= f_block[k] <= prm.f_max + tol):
            out.append(Violation("eq15", t, f"k{k}", float(max(prm.f_min - f_block[k], f_block[k] - prm.f_max)), "f"))
    rocof = sur.rocof(p_tot, p_prev)
    nadir = sur.nadir(p_tot, p_prev)
    for j, unit in enumerate(inst.bess):
        if not prm.f_qss_min - tol <= qss[j] <= prm.f_qss_max + tol:
            out.append(Violation("eq15", t, unit.id, float(max(prm.f_qss_min - qss[j], qss[j] - prm.f_qss_max)), "QSS"))
        if rocof[j] > prm.rocof_max + tol:
            out.append(Violation("eq15", t, unit.id, float(rocof[j] - prm.rocof_max), "MaxRoCoF"))
        if nadir[j] < prm.nadir_min - tol:
            out.append(Violation("eq15", t, unit.id, float(prm.nadir_min - nadir[j]), "nadir"))
    return out


# --------------------------------------------------------------------------- validator


def _check_shapes(inst: Instance, plan: RestorationPlan) -> None:
    ref = RestorationPlan.empty(inst)
    for name in BINARY_FIELDS + REAL_FIELDS:
        got = np.shape(getattr(plan, name))
        want = np.shape(getattr(ref, name))
        if got != want:
            raise PlanShapeError(f"{name}: plan has shape {got}, feeder/scenario need {want}")
    if np.shape(plan.soc0) != np.shape(ref.soc0):
        raise PlanShapeError("soc0 length does not match the number of batteries")


def validate_plan(feeder: Feeder | Grid | Instance, scenario: Scenario | None, plan: RestorationPlan,
                  rules: RuleSet = SSDMGF, params: Params | None = None,
                  catalogue: ModeCatalogue | None = None) -> ViolationReport:
    if isinstance(feeder, Instance):
        inst = feeder
    else:
        grid = feeder if isinstance(feeder, Grid) else Grid.from_feeder(feeder)
        inst = Instance(grid, scenario, params or DEFAULT_PARAMS, catalogue)
    return PlanValidator(inst, rules).run(plan)


class PlanValidator:
    def __init__(self, inst: Instance, rules: RuleSet = SSDMGF):
        self.inst = inst
        self.rules = rules
        self.p = inst.params
        self.tol = inst.params.tol

    def run(self, plan: RestorationPlan) -> ViolationReport:
        inst = self.inst
        _check_shapes(inst, plan)
        self.out = ViolationReport()
        self.plan = plan
        if not np.array_equal(np.asarray(plan.u_tg, dtype=int), np.asarray(inst.u_tg, dtype=int)):
            bad = np.flatnonzero(np.asarray(plan.u_tg) != inst.u_tg)
            self.flag("scenario", int(bad[0]), "TG", 1.0, "u_TG differs from the scenario outage window")
        self.sur = FrequencySurrogate.of(inst)
        for t in range(plan.T):
            self.check_energization(t)
            self.check_switches(t)
            self.check_radiality(t)
            self.check_class_mode_sync(t)
            self.check_frequency(t)
            self.check_sources(t)
            self.check_loads(t)
            self.out.extend(balance_check(inst.feeder, plan, t, self.tol))
            self.out.extend(voltage_drop_check(inst.feeder, plan, t, self.tol, self.p.v_max_sq))
            self.out.extend(security_check(inst.feeder, plan, t, self.p.v_min_sq, self.p.v_max_sq, self.tol))
        return self.out

    # ------------------------------------------------------------ helpers
    def flag(self, tag: str, t: int, entity: str, residual: float, detail: str = "") -> None:
        self.out.append(Violation(tag, t, entity, float(residual), detail))

    def prev(self, name: str, t: int):
        arr = getattr(self.plan, name)
        return arr[t - 1] if t > 0 else np.zeros_like(arr[0])

    def ge(self, tag, t, entity, lhs, rhs, detail=""):
        """Flag when lhs >= rhs fails."""
        if lhs < rhs - self.tol:
            self.flag(tag, t, entity, rhs - lhs, detail)

    def eq(self, tag, t, entity, lhs, rhs, detail="", tol=None):
        tol = self.tol if tol is None else tol
        if abs(lhs - rhs) > tol:
            self.flag(tag, t, entity, abs(lhs - rhs), detail)

    # ------------------------------------------------------------ energization
    def check_energization(self, t: int) -> None:
        inst, plan = self.inst, self.plan
        u, u_prev = plan.u_bk[t], self.prev("u_bk", t)
        for k in range(inst.K):
            self.ge("eq25a", t, f"k{k}", u[k], u_prev[k])
            for b in inst.block_buses[k]:
                self.eq("eq25b", t, f"bus {inst.feeder.bus_ids[b]}", plan.u_b[t, b], u[k])
            for li in inst.block_ln_lines[k]:
                self.eq("eq25c", t, f"line {inst.feeder.lines[li].id}", plan.u_line[t, li], u[k])
        for li in inst.esw_lines:
            for k in inst.line_block_pair[li]:
                self.ge("eq25d", t, f"line {inst.feeder.lines[li].id}", u[k], plan.u_line[t, li])
        du_esw = plan.u_line[t] - self.prev("u_line", t)
        for k, ids in enumerate(inst.grid.partition.esw_lines):
            total = sum(int(du_esw[inst.feeder.line_pos[l]]) for l in ids)
            cap = int(u_prev[k]) * int(inst.esw_m[k]) + 1
            if total > cap:
                self.flag("eq25e", t, f"k{k}", total - cap)
        # source and damage rules
        for k in inst.grid.bess_blocks:
            self.eq("bs-source", t, f"k{k}", u[k], 1, "BESS blocks self-start at t=0")
        if inst.grid.tg_block is not None:
            self.eq("bs-source", t, f"k{inst.grid.tg_block}", u[inst.grid.tg_block], inst.u_tg[t],
                    "the TG block is energized exactly when the TG is available")
        if inst.scenario.damaged is not None:
            self.eq("damage", t, f"k{inst.scenario.damaged}", u[inst.scenario.damaged], 0)

    def check_switches(self, t: int) -> None:
        inst, plan = self.inst, self.plan
        ub_prev = self.prev("u_b", t)
        ul_prev = self.prev("u_line", t)
        for li in inst.esw_lines:
            a, b = inst.line_ends[li]
            name = f"line {inst.feeder.lines[li].id}"
            u = int(plan.u_line[t, li])
            self.ge("eq26a", t, name, int(ub_prev[a]) + int(ub_prev[b]), u)
            self.ge("eq26b", t, name, 2 - int(ub_prev[a]) - int(ub_prev[b]), u - int(ul_prev[li]))
        for li in inst.ssw_lines:
            a, b = inst.line_ends[li]
            name = f"line {inst.feeder.lines[li].id}"
            u = int(plan.u_line[t, li])
            self.ge("eq27a", t, name, u, int(ul_prev[li]))
            self.ge("eq27b", t, name, int(ub_prev[a]) + int(ub_prev[b]), 2 * u)
            if self.rules.ssw_lockout:
                self.ge("rr-lockout", t, name, int(inst.u_tg[t]), u, "SSW closed while the TG is unavailable")
        for li, (a, b) in enumerate(inst.line_ends):
            if plan.u_line[t, li] and not (plan.u_b[t, a] and plan.u_b[t, b]):
                self.flag("line-state", t, f"line {inst.feeder.lines[li].id}", 1.0, "closed line with a dead terminal")

    def check_radiality(self, t: int) -> None:
        inst, plan = self.inst, self.plan
        lines, buses, s_t = radiality_terms(plan, t, inst.n_bess_blocks, inst.ssw_lines)
        self.eq("eq28b", t, "system", int(plan.s[t]), s_t)
        self.eq("eq28a", t, "system", lines, buses - int(plan.s[t]))
        # forest check: every energized component must hold a BS source, no cycles
        live = np.flatnonzero(plan.u_b[t])
        dsu = DisjointSet(int(b) for b in live)
        cycles = 0
        for li, (a, b) in enumerate(inst.line_ends):
            if plan.u_line[t, li] and plan.u_b[t, a] and plan.u_b[t, b]:
                if not dsu.union(int(a), int(b)):
                    cycles += 1
        if cycles:
            self.flag("radial", t, "system", cycles, "closed lines form a cycle")
        src = set(int(inst.bess_bus[j]) for j in range(len(inst.bess)))
        if inst.tg_bus is not None and inst.u_tg[t]:
            src.add(int(inst.tg_bus))
        roots_with_src = {dsu.find(b) for b in src if b in dsu}
        orphan = {dsu.find(int(b)) for b in live} - roots_with_src
        if orphan:
            self.flag("radial", t, "system", len(orphan), "energized island without a BS source")

    # ------------------------------------------------------------ class / mode / sync
    def check_class_mode_sync(self, t: int) -> None:
        inst, plan = self.inst, self.plan
        cat = inst.catalogue
        s_t = int(plan.s[t])
        uc = plan.u_class[t].astype(int)
        um = plan.u_mode[t].astype(int)
        active = inst.active_bs(t)
        classes = np.arange(1, len(uc) + 1)
        if active:
            self.eq("eq20a", t, "system", int((classes * uc).sum()), s_t)
            self.eq("eq20b", t, "system", int(uc.sum()), 1)
        else:
            self.eq("eq20a", t, "system", int(uc.sum()), 0, "no active BS block: no class selected")
        by_class: dict[int, list[int]] = {}
        for i, m in enumerate(cat.modes):
            by_class.setdefault(m.klass, []).append(i)
        for c in classes:
            self.eq("eq21", t, f"class {c}", int(sum(um[i] for i in by_class.get(int(c), []))), int(uc[c - 1]))
        sel = np.flatnonzero(um)
        if len(sel) == 1 and set(cat.modes[sel[0]].blocks) != set(active):
            self.flag("eq21", t, f"mode {sel[0]}", 1.0, "mode is not defined over the active BS set")

        us = plan.u_sync[t].astype(int)
        us_prev = self.prev("u_sync", t).astype(int)
        bs = inst.bs_blocks
        n = len(bs)
        if n and (not np.array_equal(us, us.T) or np.any(np.diag(us))):
            self.flag("eq22", t, "u_sync", 1.0, "sync matrix must be symmetric with a zero diagonal")
        for i, j in itertools.combinations(range(n), 2):
            name = f"k{bs[i]}-k{bs[j]}"
            self.ge("eq22a", t, name, us[i, j], us_prev[i, j])
            both = bs[i] in active and bs[j] in active
            if not both and us[i, j]:
                self.flag("eq23", t, name, 1.0, "sync indicator on an inactive BS block")
            if len(sel) == 1 and both:
                want = int(cat.modes[sel[0]].same_part(bs[i], bs[j]))
                self.eq("eq23", t, name, us[i, j], want)
            if both and plan.u_bk[t, bs[i]] and plan.u_bk[t, bs[j]]:
                diff = plan.f_block[t, bs[j]] - plan.f_block[t, bs[i]] + self.p.mu_offset
                if us[i, j] and abs(diff) > self.p.sync_eps + self.tol:
                    self.flag("eq22c", t, name, abs(diff) - self.p.sync_eps, "synchronized pair outside tolerance")
                if self.p.strict_frequency_separation and not us[i, j] and abs(diff) < 2 * self.p.sync_eps - self.tol:
                    self.flag("eq22d", t, name, 2 * self.p.sync_eps - abs(diff), "unsynchronized pair too close")
        if self.rules.sync_safety and t > 0 and n >= 3:
            verdict = check_transition_safety(us_prev, us, labels=[f"k{k}" for k in bs])
            for tri in verdict.violations:
                self.flag("eq24", t, ",".join(tri), 1.0, "more than one island merged into another")

    # ------------------------------------------------------------ frequency
    def check_frequency(self, t: int) -> None:
        inst, plan, prm = self.inst, self.plan, self.p
        sur = self.sur
        tg = inst.grid.tg_block
        if tg is not None:
            self.eq("eq13", t, f"k{tg}", plan.f_block[t, tg], NOMINAL_HZ * int(inst.u_tg[t]))
        p_tot = plan.p_bess[t].sum(axis=1)
        p_prev = plan.p_bess[t - 1].sum(axis=1) if t > 0 else np.zeros_like(p_tot)
        qss = sur.qss(p_tot)
        delta = sync_delta(inst, plan, t)
        for j, unit in enumerate(inst.bess):
            k = int(inst.bess_block[j])
            self.eq("eq14", t, unit.id, plan.f_qss[t, j], qss[j], "QSS value disagrees with the droop surrogate")
            self.eq("eq14a", t, unit.id, plan.f_block[t, k], plan.f_qss[t, j] + delta[j] * plan.df_sync[t, j])
        self.out.extend(_frequency_security(inst, sur, t, plan.u_bk[t], plan.f_block[t], qss, p_tot, p_prev))
        for b in inst.switch_terminal_buses:
            self.eq("eq16", t, f"bus {inst.feeder.bus_ids[b]}", plan.f_bus[t, b], plan.f_block[t, inst.bus_block[b]])
        cap = prm.f_max
        for li in inst.esw_lines + inst.ssw_lines:
            a, b = inst.line_ends[li]
            gap = abs(plan.f_bus[t, a] - plan.f_bus[t, b])
            slack = (1 - int(plan.u_line[t, li])) * cap
            if inst.line_kind[li] == "ESW":
                if gap > slack + self.tol:
                    self.flag("eq17", t, f"line {inst.feeder.lines[li].id}", gap - slack)
            elif gap > slack + prm.sync_eps + self.tol:
                self.flag("eq18", t, f"line {inst.feeder.lines[li].id}", gap - slack - prm.sync_eps)

    # ------------------------------------------------------------ sources
    def check_sources(self, t: int) -> None:
        inst, plan, prm = self.inst, self.plan, self.p
        ct = prm.cap_tol
        if inst.feeder.tg is not None:
            cap = (int(inst.u_tg[t]) * inst.tg_s / 3.0) ** 2
            worst = float((plan.p_tg[t] ** 2 + plan.q_tg[t] ** 2).max())
            if worst > cap + ct:
                self.flag("eq29", t, inst.feeder.tg.id, worst - cap)
        elif np.any(plan.p_tg[t]) or np.any(plan.q_tg[t]):
            self.flag("eq29", t, "TG", 1.0, "output without a TG attachment")
        lo, hi = inst.soc_bounds
        soc_prev = plan.soc[t - 1] if t > 0 else plan.soc0
        for j, unit in enumerate(inst.bess):
            cap = (unit.s_nom / 3.0) ** 2
            worst = float((plan.p_bess[t, j] ** 2 + plan.q_bess[t, j] ** 2).max())
            if worst > cap + ct:
                self.flag("eq30a", t, unit.id, worst - cap)
            want = soc_prev[j] - plan.p_bess[t, j].sum() * inst.dt_h / unit.e_nom
            self.eq("eq30b", t, unit.id, plan.soc[t, j], want)
            if plan.soc[t, j] < lo[j] - self.tol or plan.soc[t, j] > hi[j] + self.tol:
                self.flag("eq30c", t, unit.id, float(max(lo[j] - plan.soc[t, j], plan.soc[t, j] - hi[j])))
        # PV with activation delay
        d = prm.pv_delay
        lag = plan.u_bk[t - d] if t - d >= 0 else np.zeros(inst.K, dtype=int)
        want_p = lag[inst.bus_block][:, None] * inst.eta[t] * inst.pv_rating
        want_q = want_p * inst.tan_pv[:, None]
        self._compare_bus_arrays("eq31", t, plan.p_pv[t], want_p, plan.q_pv[t], want_q)

    # ------------------------------------------------------------ loads
    def _mult(self, hist: np.ndarray, t: int) -> np.ndarray:
        """sum_o beta_o du_{t-(o-1)} + u_t for a [T, N] 0/1 history."""
        beta = self.p.beta
        u = hist.astype(float)
        out = u[t].copy()
        for o, b in enumerate(beta):
            s = t - o
            if s < 0:
                continue
            du = u[s] - (u[s - 1] if s > 0 else 0.0)
            out = out + b * du
        return out

    def check_loads(self, t: int) -> None:
        inst, plan = self.inst, self.plan
        bus_hist = plan.u_bk[:, inst.bus_block]  # [T, Nb]
        m_cl = self._mult(bus_hist, t) * inst.is_cl
        want_p = inst.p_ld[t] * m_cl[:, None]
        self._compare_bus_arrays("eq32", t, plan.p_cl[t], want_p, plan.q_cl[t], want_p * inst.tan_load[:, None])
        m_nl = self._mult(plan.u_nlb, t) * inst.is_nl
        want_p = inst.p_ld[t] * m_nl[:, None]
        self._compare_bus_arrays("eq33", t, plan.p_nl[t], want_p, plan.q_nl[t], want_p * inst.tan_load[:, None])
        prev = self.prev("u_nlb", t)
        for b in range(inst.n_bus):
            name = f"bus {inst.feeder.bus_ids[b]}"
            if plan.u_nlb[t, b] and not inst.is_nl[b]:
                self.flag("eq33", t, name, 1.0, "NL pickup flag on a bus without an NL")
            self.ge("eq33c", t, name, int(plan.u_bk[t, inst.bus_block[b]]), int(plan.u_nlb[t, b]))
            self.ge("eq33d", t, name, int(plan.u_nlb[t, b]), int(prev[b]))

    def _compare_bus_arrays(self, tag, t, p, want_p, q, want_q) -> None:
        err = np.maximum(np.abs(p - want_p).max(axis=1), np.abs(q - want_q).max(axis=1))
        for b in np.flatnonzero(err > self.tol):
            self.flag(tag, t, f"bus {self.inst.feeder.bus_ids[b]}", float(err[b]))
