"""Per-(feeder, scenario) precomputation shared by the engine, the validator and
the model exporter."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .config import DEFAULT_PARAMS, Params
from .scenario import Scenario
from .sync_structure import ModeCatalogue
from .topology import Grid


@dataclass(eq=False)
class Instance:
    grid: Grid
    scenario: Scenario
    params: Params = DEFAULT_PARAMS
    catalogue: ModeCatalogue | None = None

    def __post_init__(self):
        if self.catalogue is None:
            self.catalogue = ModeCatalogue.build(self.grid)
        dmg = self.scenario.damaged
        if dmg is not None:
            if not 0 <= dmg < self.grid.n_blocks:
                raise ValueError(f"damaged block k{dmg} does not exist")
            if dmg in self.grid.bs_blocks:
                raise ValueError(f"damaged block k{dmg} is a BS block")

    # ------------------------------------------------------------ sizes & indexing
    @property
    def feeder(self):
        return self.grid.feeder

    @property
    def T(self) -> int:
        return self.scenario.horizon

    @property
    def K(self) -> int:
        return self.grid.n_blocks

    @cached_property
    def n_bus(self) -> int:
        return len(self.feeder.bus_ids)

    @cached_property
    def n_line(self) -> int:
        return len(self.feeder.lines)

    @property
    def dt_min(self) -> float:
        return self.scenario.dt_min

    @property
    def dt_h(self) -> float:
        return self.scenario.dt_h

    @cached_property
    def u_tg(self) -> np.ndarray:
        if self.grid.tg_block is None:
            return np.zeros(self.T, dtype=np.int8)
        return self.scenario.u_tg()

    @cached_property
    def tg_return(self) -> int | None:
        idx = np.flatnonzero(self.u_tg)
        return int(idx[0]) if idx.size else None

    @cached_property
    def bus_block(self) -> np.ndarray:
        tau = self.grid.partition.tau
        return np.array([tau[b] for b in self.feeder.bus_ids], dtype=int)

    @cached_property
    def phase_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_bus, 3), dtype=bool)
        for i, b in enumerate(self.feeder.bus_ids):
            mask[i, list(self.feeder.buses[b].phases)] = True
        return mask

    @cached_property
    def line_mask(self) -> np.ndarray:
        mask = np.zeros((self.n_line, 3), dtype=bool)
        for i, ln in enumerate(self.feeder.lines):
            mask[i, list(ln.phases)] = True
        return mask

    @cached_property
    def line_ends(self) -> np.ndarray:
        pos = self.feeder.bus_pos
        return np.array([[pos[ln.from_bus], pos[ln.to_bus]] for ln in self.feeder.lines], dtype=int)

    @cached_property
    def line_kind(self) -> tuple[str, ...]:
        return tuple(ln.kind for ln in self.feeder.lines)

    @cached_property
    def line_block_pair(self) -> np.ndarray:
        return np.array([self.grid.line_blocks[ln.id] for ln in self.feeder.lines], dtype=int)

    @cached_property
    def r(self) -> np.ndarray:
        return np.stack([ln.r for ln in self.feeder.lines]) if self.feeder.lines else np.zeros((0, 3, 3))

    @cached_property
    def x(self) -> np.ndarray:
        return np.stack([ln.x for ln in self.feeder.lines]) if self.feeder.lines else np.zeros((0, 3, 3))

    @cached_property
    def p_max(self) -> np.ndarray:
        return np.stack([ln.p_max for ln in self.feeder.lines]) if self.feeder.lines else np.zeros((0, 3))

    @cached_property
    def q_max(self) -> np.ndarray:
        return np.stack([ln.q_max for ln in self.feeder.lines]) if self.feeder.lines else np.zeros((0, 3))

    # ------------------------------------------------------------ BS sets
    @property
    def bs_blocks(self) -> tuple[int, ...]:
        return self.grid.bs_blocks

    @cached_property
    def bs_pos(self) -> dict[int, int]:
        return {k: i for i, k in enumerate(self.bs_blocks)}

    def active_bs(self, t: int) -> tuple[int, ...]:
        return self.catalogue.bs.active(self.u_tg[t])

    @cached_property
    def n_bess_blocks(self) -> int:
        return len(self.grid.bess_blocks)

    # ------------------------------------------------------------ devices
    @cached_property
    def bess(self) -> tuple:
        return self.feeder.batteries

    @cached_property
    def bess_bus(self) -> np.ndarray:
        return np.array([self.feeder.bus_pos[b.bus] for b in self.bess], dtype=int)

    @cached_property
    def bess_block(self) -> np.ndarray:
        return np.array([self.grid.block_of(b.bus) for b in self.bess], dtype=int)

    @cached_property
    def bess_s(self) -> np.ndarray:
        return np.array([b.s_nom for b in self.bess], dtype=float)

    @cached_property
    def bess_e(self) -> np.ndarray:
        return np.array([b.e_nom for b in self.bess], dtype=float)

    @cached_property
    def bess_droop(self) -> np.ndarray:
        return np.array([self.params.default_droop if b.droop is None else b.droop for b in self.bess])

    @cached_property
    def soc0(self) -> np.ndarray:
        return np.array([b.soc_init for b in self.bess], dtype=float)

    @cached_property
    def soc_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([self.params.soc_min if b.soc_min is None else b.soc_min for b in self.bess])
        hi = np.array([self.params.soc_max if b.soc_max is None else b.soc_max for b in self.bess])
        return lo, hi

    @cached_property
    def tg_bus(self) -> int | None:
        tg = self.feeder.tg
        return None if tg is None else self.feeder.bus_pos[tg.bus]

    @cached_property
    def tg_s(self) -> float:
        return 0.0 if self.feeder.tg is None else self.feeder.tg.s_max

    # ------------------------------------------------------------ loads & PV
    @cached_property
    def load_factor(self) -> np.ndarray:
        return self.scenario.load_factor(self.feeder)

    @cached_property
    def eta(self) -> np.ndarray:
        return self.scenario.pv_factor(self.feeder)

    @cached_property
    def _loads(self):
        nb = self.n_bus
        nominal = np.zeros((nb, 3))
        is_cl = np.zeros(nb, dtype=bool)
        is_nl = np.zeros(nb, dtype=bool)
        tan = np.zeros(nb)
        for bus, ld in self.feeder.loads.items():
            i = self.feeder.bus_pos[bus]
            nominal[i] = ld.p_nom
            is_cl[i] = ld.kind == "CL"
            is_nl[i] = ld.kind == "NL"
            tan[i] = ld.tan_phi
        return nominal, is_cl, is_nl, tan

    @cached_property
    def p_ld(self) -> np.ndarray:
        """Nominal (pre-CLPU) demand per step, bus and phase, [T, Nb, 3]."""
        nominal = self._loads[0]
        return self.load_factor[:, None, None] * nominal[None, :, :]

    @property
    def is_cl(self) -> np.ndarray:
        return self._loads[1]

    @property
    def is_nl(self) -> np.ndarray:
        return self._loads[2]

    @property
    def tan_load(self) -> np.ndarray:
        return self._loads[3]

    @cached_property
    def nl_buses(self) -> np.ndarray:
        return np.flatnonzero(self.is_nl)

    @cached_property
    def cl_buses(self) -> np.ndarray:
        return np.flatnonzero(self.is_cl)

    @cached_property
    def pv_rating(self) -> np.ndarray:
        """Per bus and phase, one third of the PV rating on each phase of the bus."""
        out = np.zeros((self.n_bus, 3))
        for unit in self.feeder.pvs:
            i = self.feeder.bus_pos[unit.bus]
            out[i, self.phase_mask[i]] = unit.s_nom / 3.0
        return out

    @cached_property
    def tan_pv(self) -> np.ndarray:
        out = np.zeros(self.n_bus)
        for unit in self.feeder.pvs:
            out[self.feeder.bus_pos[unit.bus]] = unit.tan_phi
        return out

    # ------------------------------------------------------------ CLPU
    @cached_property
    def clpu(self) -> np.ndarray:
        """Multiplier on nominal demand by steps since pickup (index 0 = pickup step)."""
        b = self.params.beta
        return np.array([1.0 + b[0], 1.0 + b[1], 1.0 + b[2], 1.0])

    def multiplier(self, age: int) -> float:
        if age < 0:
            return 0.0
        return float(self.clpu[min(age, 3)])

    @cached_property
    def load_tail(self) -> np.ndarray:
        """tail[tau, b] = sum over s >= tau of total demand of bus b picked up at tau, [T+1, Nb]."""
        T = self.T
        tot = self.p_ld.sum(axis=2)  # [T, Nb]
        tail = np.zeros((T + 1, self.n_bus))
        for tau in range(T):
            ages = np.arange(T - tau)
            mult = self.clpu[np.minimum(ages, 3)]
            tail[tau] = (mult[:, None] * tot[tau:]).sum(axis=0)
        return tail

    @cached_property
    def load_tail_best(self) -> np.ndarray:
        """best[tau, b] = max over tau' >= tau of tail[tau', b]."""
        tail = self.load_tail
        return np.maximum.accumulate(tail[::-1], axis=0)[::-1]

    # ------------------------------------------------------------ objective weights
    @cached_property
    def bus_weight(self) -> np.ndarray:
        w = np.zeros(self.n_bus)
        w[self.is_cl] = self.params.alpha_cl
        w[self.is_nl] = self.params.alpha_nl
        return w

    # ------------------------------------------------------------ switch helpers
    @cached_property
    def esw_lines(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.line_kind) if k == "ESW")

    @cached_property
    def ssw_lines(self) -> tuple[int, ...]:
        return tuple(i for i, k in enumerate(self.line_kind) if k == "SSW")

    @cached_property
    def esw_m(self) -> np.ndarray:
        """Big-M of the per-block ESW pickup limit, max(0, |ESW_k| - 2)."""
        return np.array([max(0, len(x) - 2) for x in self.grid.partition.esw_lines], dtype=int)

    @cached_property
    def block_buses(self) -> tuple[np.ndarray, ...]:
        pos = self.feeder.bus_pos
        return tuple(np.array([pos[b] for b in members], dtype=int) for members in self.grid.partition.blocks)

    @cached_property
    def block_ln_lines(self) -> tuple[np.ndarray, ...]:
        lp = self.feeder.line_pos
        return tuple(np.array([lp[l] for l in ids], dtype=int) for ids in self.grid.partition.ln_lines)

    @cached_property
    def switch_terminal_buses(self) -> np.ndarray:
        ends = {int(b) for li in self.esw_lines + self.ssw_lines for b in self.line_ends[li]}
        return np.array(sorted(ends), dtype=int)

    def digest(self) -> str:
        return self.feeder.digest()
