"""Small synthetic feeders for oracle checks, warm-start experiments and the
merge-safety counterexample."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .scenario import SEASONS, Scenario
from .topology import Feeder, Grid, parse_feeder

_R3 = "0.002 0.0008 0.0008 0.0008 0.002 0.0008 0.0008 0.0008 0.002"
_X3 = "0.004 0.0016 0.0016 0.0016 0.004 0.0016 0.0016 0.0016 0.004"
_LIM3 = "2.0 2.0 2.0"


def _single_phase(value: float, phase: int) -> str:
    m = np.zeros((3, 3))
    m[phase, phase] = value
    return " ".join(repr(float(v)) for v in m.ravel())


def _limits(phase: int | None) -> str:
    if phase is None:
        return _LIM3
    lim = np.zeros(3)
    lim[phase] = 2.0
    return " ".join(repr(float(v)) for v in lim)


@dataclass
class FeederBuilder:
    """Accumulates records and renders the sectioned feeder text."""

    buses: list[str] = field(default_factory=list)
    lines: list[str] = field(default_factory=list)
    devices: list[str] = field(default_factory=list)
    loads: list[str] = field(default_factory=list)
    profiles: list[str] = field(default_factory=list)

    def bus(self, bus_id: int, phase: int | None = None) -> None:
        self.buses.append(f"{bus_id}, {'abc' if phase is None else 'abc'[phase]}")

    def line(self, lid: str, a: int, b: int, kind: str, phase: int | None = None) -> None:
        if phase is None:
            self.lines.append(f"{lid}, {a}, {b}, abc, {kind}, {_R3}, {_X3}, {_LIM3}, {_LIM3}")
        else:
            r, x = _single_phase(0.002, phase), _single_phase(0.004, phase)
            self.lines.append(f"{lid}, {a}, {b}, {'abc'[phase]}, {kind}, {r}, {x}, {_limits(phase)}, {_limits(phase)}")

    def text(self, title: str) -> str:
        parts = [f"# {title}", "[buses]", *self.buses, "", "[lines]", *self.lines, "", "[devices]", *self.devices,
                 "", "[loads]", *self.loads]
        if self.profiles:
            parts += ["", "[profiles]", *self.profiles]
        return "\n".join(parts) + "\n"


def random_toy(rng: np.random.Generator, max_blocks: int = 4, max_steps: int = 5,
               max_ssw: int = 2, nl_share: float = 0.5) -> tuple[Feeder, Scenario]:
    """A random radial-block feeder with a TG, 1-2 batteries and a short horizon.

    ``nl_share`` is the probability that a load is non-critical.
    """
    K = int(rng.integers(2, max_blocks + 1))
    fb = FeederBuilder()
    members: list[list[int]] = []
    next_bus = 1
    lateral = None
    for k in range(K):
        size = int(rng.integers(1, 3))
        ids = list(range(next_bus, next_bus + size))
        next_bus += size
        for b in ids:
            fb.bus(b)
        for i in range(1, size):
            fb.line(f"L{ids[i]}", ids[i - 1], ids[i], "LN")
        members.append(ids)
    if rng.random() < 0.3:
        host = int(rng.integers(0, K))
        phase = int(rng.integers(0, 3))
        lateral = (next_bus, phase)
        fb.bus(next_bus, phase)
        fb.line(f"L{next_bus}", members[host][-1], next_bus, "LN", phase)
        members[host].append(next_bus)
        next_bus += 1

    three_phase = lambda k: [b for b in members[k] if lateral is None or b != lateral[0]]  # noqa: E731
    pairs = set()
    for k in range(1, K):
        j = int(rng.integers(0, k))
        pairs.add((j, k))
        fb.line(f"E{k}", int(rng.choice(three_phase(j))), int(rng.choice(three_phase(k))), "ESW")
    n_ssw = int(rng.integers(0, max_ssw + 1))
    candidates = [(a, b) for a in range(K) for b in range(a + 1, K) if (a, b) not in pairs]
    rng.shuffle(candidates)
    for i, (a, b) in enumerate(candidates[:n_ssw]):
        fb.line(f"S{i + 1}", int(rng.choice(three_phase(a))), int(rng.choice(three_phase(b))), "SSW")

    loads: dict[int, np.ndarray] = {}
    for b in range(1, next_bus):
        if rng.random() < 0.8:
            p = rng.uniform(0.02, 0.2, size=3).round(4)
            if lateral is not None and b == lateral[0]:
                p = np.where(np.arange(3) == lateral[1], p, 0.0)
            loads[b] = p
            kind = "NL" if rng.random() < nl_share else "CL"
            fb.loads.append(f"{b}, {kind}, {p[0]}, {p[1]}, {p[2]}, 0.92")

    tg_own = sum((loads.get(b, np.zeros(3)) for b in members[0]), np.zeros(3))
    fb.devices.append(f"TG, TG1, {members[0][0]}, s_max={round(max(2.0, 3.0 * 2.0 * float(tg_own.max()) * 1.2), 3)}")
    n_bess = int(rng.integers(1, min(2, K - 1) + 1))
    for i, k in enumerate(sorted(rng.choice(np.arange(1, K), size=n_bess, replace=False))):
        # the battery must carry its own block through cold-load pickup
        own = sum((loads.get(b, np.zeros(3)) for b in members[int(k)]), np.zeros(3))
        floor = 3.0 * 2.0 * float(own.max()) * 1.2
        s = round(max(float(rng.uniform(0.3, 1.0)), floor), 3)
        e = round(s * float(rng.uniform(1.0, 2.5)), 3)
        fb.devices.append(f"BESS, B{i + 1}, {members[int(k)][0]}, s_nom={s}, e_nom={e}, soc_init=0.9")
    for b in range(1, next_bus):
        if rng.random() < 0.25:
            fb.devices.append(f"PV, PV{b}, {b}, s_nom={round(float(rng.uniform(0.03, 0.15)), 3)}")
    for season in SEASONS:
        load = rng.uniform(0.6, 1.0, size=24).round(3)
        hours = np.arange(24)
        pv = np.clip(np.sin((hours - 6) / 12 * np.pi), 0, None).round(3)
        fb.profiles.append(f"{season}, load, {' '.join(map(str, load))}")
        fb.profiles.append(f"{season}, pv, {' '.join(map(str, pv))}")
    feeder = parse_feeder(fb.text("random toy"), name="toy")

    grid = Grid.from_feeder(feeder)
    non_bs = [k for k in range(grid.n_blocks) if k not in grid.bs_blocks]
    damaged = None
    if non_bs and rng.random() < 0.5:
        damaged = int(rng.choice(non_bs))
    T = int(rng.integers(3, max_steps + 1))
    nu = int(rng.choice([0, 30, 45, 60, 600, 600]))
    scenario = Scenario(str(rng.choice(SEASONS)), int(rng.integers(6, 17)), nu, damaged, T, 15.0, name="")
    return feeder, scenario


def holds_idle(feeder: Feeder, scenario: Scenario) -> bool:
    """Whether switching nothing at all is a feasible plan."""
    from .config import SSDMGF
    from .context import Instance
    from .engine import NO_ACTION, Engine

    eng = Engine(Instance(Grid.from_feeder(feeder), scenario), SSDMGF)
    try:
        eng.rollout([NO_ACTION] * scenario.horizon)
    except ValueError:
        return False
    return True


def toy_suite(n: int, seed: int = 42, **kw) -> list[tuple[Feeder, Scenario]]:
    """``n`` random toys, each admitting the do-nothing plan."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        feeder, scenario = random_toy(rng, **kw)
        if holds_idle(feeder, scenario):
            out.append((feeder, scenario))
    return out


def triple_merge_instance() -> tuple[Feeder, Scenario]:
    """Three battery islands in a row plus a heavy load only all three can carry.

    Merging all three at once reaches the heavy load one step earlier than
    two pairwise merges, so a policy without merge safety prefers it.
    """
    fb = FeederBuilder()
    for b in range(1, 6):
        fb.bus(b)
    fb.line("E1", 1, 2, "ESW")  # TG block Z to A
    fb.line("S1", 2, 3, "SSW")  # A - C
    fb.line("S2", 3, 4, "SSW")  # C - B
    fb.line("E2", 3, 5, "ESW")  # C - X
    fb.devices += [
        "TG, TG1, 1, s_max=3.0",
        "BESS, BA, 2, s_nom=0.9, e_nom=1.0, soc_init=0.9",
        "BESS, BC, 3, s_nom=0.9, e_nom=1.0, soc_init=0.9",
        "BESS, BB, 4, s_nom=0.9, e_nom=1.0, soc_init=0.9",
    ]
    fb.loads += [
        "2, CL, 0.01, 0.01, 0.01, 0.95",
        "3, CL, 0.01, 0.01, 0.01, 0.95",
        "4, CL, 0.01, 0.01, 0.01, 0.95",
        "5, CL, 0.3, 0.3, 0.3, 0.95",
    ]
    feeder = parse_feeder(fb.text("triple merge"), name="triple-merge")
    return feeder, Scenario("spring", 10, 10_000, None, 4, 15.0, name="triple-merge")


def scale_sources(feeder: Feeder, factor: float) -> Feeder:
    """Copy of ``feeder`` with every TG and BESS power rating multiplied by ``factor``."""
    tg = None if feeder.tg is None else replace(feeder.tg, s_max=feeder.tg.s_max * factor)
    bats = tuple(replace(b, s_nom=b.s_nom * factor) for b in feeder.batteries)
    return replace(feeder, tg=tg, batteries=bats, name=f"{feeder.name}-x{factor:g}")
