"""Outage scenarios, the scenario grid, node/edge feature tensors and
supervision labels extracted from solved plans."""

from __future__ import annotations

import itertools
import json
import pathlib
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .topology import Feeder, Grid

if TYPE_CHECKING:  # pragma: no cover
    from .plan import RestorationPlan

SEASONS = ("spring", "summer", "fall", "winter")
FEATURE_CHANNELS = (
    "p_cl",
    "p_nl",
    "p_pv",
    "u_tg",
    "y_dmg",
    "y_bess",
    "s_bess",
    "e_bess",
    "n_esw",
    "n_ssw",
)


@dataclass(frozen=True)
class Scenario:
    season: str
    t0: int  # start hour
    nu: int  # TG outage duration, minutes
    damaged: int | None
    horizon: int  # number of steps
    dt_min: float = 15.0
    name: str = ""

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must contain at least one step")
        if self.dt_min <= 0:
            raise ValueError("dt_min must be positive")

    @property
    def dt_h(self) -> float:
        return self.dt_min / 60.0

    @property
    def id(self) -> str:
        if self.name:
            return self.name
        dmg = "none" if self.damaged is None else f"k{self.damaged}"
        return f"{self.season}-t{self.t0:02d}-nu{self.nu}-{dmg}"

    def u_tg(self) -> np.ndarray:
        t = np.arange(self.horizon)
        return (t * self.dt_min >= self.nu).astype(np.int8)

    def hours(self) -> np.ndarray:
        t = np.arange(self.horizon)
        return (np.floor(self.t0 + t * self.dt_min / 60.0).astype(int)) % 24

    def load_factor(self, feeder: Feeder) -> np.ndarray:
        return self._profile(feeder, "load", default=1.0)

    def pv_factor(self, feeder: Feeder) -> np.ndarray:
        return self._profile(feeder, "pv", default=0.0)

    def _profile(self, feeder: Feeder, kind: str, default: float) -> np.ndarray:
        if not feeder.profiles:
            return np.full(self.horizon, default)
        if self.season not in feeder.profiles or kind not in feeder.profiles[self.season]:
            raise KeyError(f"feeder has no {kind} profile for season {self.season!r}")
        return np.asarray(feeder.profiles[self.season][kind], dtype=float)[self.hours()]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["id"] = self.id
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        keys = {"season", "t0", "nu", "damaged", "horizon", "dt_min", "name"}
        return cls(**{k: v for k, v in data.items() if k in keys})

    def save(self, path: str | pathlib.Path) -> None:
        pathlib.Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | pathlib.Path) -> "Scenario":
        return cls.from_dict(json.loads(pathlib.Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class GridConfig:
    seasons: tuple[str, ...] = SEASONS
    t0s: tuple[int, ...] = tuple(range(6, 17))
    nus: tuple[int, ...] = (60, 120, 240)
    damaged: tuple[int, ...] | None = None  # None: every non-BS block
    dt_min: float = 15.0
    tail_hours: float = 4.0

    @classmethod
    def from_dict(cls, data: dict) -> "GridConfig":
        conv = {}
        for key, val in data.items():
            if key not in cls.__dataclass_fields__:
                raise KeyError(f"unknown grid option {key!r}")
            conv[key] = tuple(val) if isinstance(val, list) else val
        return cls(**conv)

    def horizon(self) -> int:
        span = max(self.nus) + self.tail_hours * 60.0
        return int(np.ceil(span / self.dt_min))


def generate_grid(grid: Grid, config: GridConfig = GridConfig()) -> list[Scenario]:
    """Cartesian product of season x start hour x outage duration x damaged block."""
    bs = set(grid.bs_blocks)
    if config.damaged is None:
        damage = [k for k in range(grid.n_blocks) if k not in bs]
    else:
        bad = [k for k in config.damaged if k in bs or not 0 <= k < grid.n_blocks]
        if bad:
            raise ValueError(f"damaged blocks must be non-BS blocks of the feeder, got {bad}")
        damage = list(config.damaged)
    if not damage:
        raise ValueError("the damage set is empty")
    horizon = config.horizon()
    return [
        Scenario(season, t0, nu, k, horizon, config.dt_min)
        for season, t0, nu, k in itertools.product(config.seasons, config.t0s, config.nus, damage)
    ]


def split_dataset(scenarios: Sequence[Scenario], seed: int = 42, ratios=(8, 1, 1)) -> dict[str, list[str]]:
    """Seeded shuffle into train/val/test id lists in the given proportions."""
    ids = [s.id for s in scenarios]
    order = np.random.default_rng(seed).permutation(len(ids))
    total = sum(ratios)
    n_train = len(ids) * ratios[0] // total
    n_val = len(ids) * ratios[1] // total
    shuffled = [ids[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "val": shuffled[n_train : n_train + n_val],
        "test": shuffled[n_train + n_val :],
    }


# --------------------------------------------------------------------------- features


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    x: np.ndarray  # [T, K, F]
    e: np.ndarray  # [|E^SW|]
    channels: tuple[str, ...] = FEATURE_CHANNELS

    def channel(self, name: str) -> np.ndarray:
        return self.x[:, :, self.channels.index(name)]

    def to_bytes(self) -> bytes:
        header = json.dumps({"T": self.x.shape[0], "K": self.x.shape[1], "F": self.x.shape[2],
                             "E": int(self.e.shape[0]), "channels": list(self.channels)})
        head = header.encode("utf-8")
        return (
            len(head).to_bytes(4, "little")
            + head
            + self.x.astype("<f8").tobytes()
            + self.e.astype("<f8").tobytes()
        )

    @classmethod
    def from_bytes(cls, blob: bytes) -> "FeatureTensor":
        n = int.from_bytes(blob[:4], "little")
        meta = json.loads(blob[4 : 4 + n].decode("utf-8"))
        body = np.frombuffer(blob[4 + n :], dtype="<f8")
        size = meta["T"] * meta["K"] * meta["F"]
        x = body[:size].reshape(meta["T"], meta["K"], meta["F"]).copy()
        e = body[size : size + meta["E"]].copy()
        return cls(x, e, tuple(meta["channels"]))


def build_features(scenario: Scenario, feeder: Feeder, grid: Grid | None = None) -> FeatureTensor:
    grid = grid or Grid.from_feeder(feeder)
    part = grid.partition
    T, K = scenario.horizon, grid.n_blocks
    load = scenario.load_factor(feeder)
    pv = scenario.pv_factor(feeder)
    x = np.zeros((T, K, len(FEATURE_CHANNELS)))
    ch = {name: i for i, name in enumerate(FEATURE_CHANNELS)}
    for ld in feeder.loads.values():
        k = part.tau[ld.bus]
        x[:, k, ch["p_cl" if ld.kind == "CL" else "p_nl"]] += load * ld.p_nom.sum()
    for unit in feeder.pvs:
        x[:, part.tau[unit.bus], ch["p_pv"]] += pv * unit.s_nom * len(feeder.buses[unit.bus].phases) / 3.0
    x[:, :, ch["u_tg"]] = scenario.u_tg()[:, None]
    if scenario.damaged is not None:
        x[:, scenario.damaged, ch["y_dmg"]] = 1.0
    for b in feeder.batteries:
        k = part.tau[b.bus]
        x[:, k, ch["y_bess"]] = 1.0
        x[:, k, ch["s_bess"]] += b.s_nom
        x[:, k, ch["e_bess"]] += b.e_nom
    for k in range(K):
        x[:, k, ch["n_esw"]] = len(part.esw_lines[k])
        x[:, k, ch["n_ssw"]] = len(part.ssw_lines[k])
    e = np.array([1.0 if edge.ssw else 0.0 for edge in grid.backbone.edges])
    return FeatureTensor(x, e)


# --------------------------------------------------------------------------- labels


def island_roots(plan: "RestorationPlan", grid: Grid) -> np.ndarray:
    """Per step and block, the root block of its energized island (-1 when dead).

    The root is the TG block when the island contains it, otherwise the
    lowest-numbered BS block of the island.
    """
    from .unionfind import DisjointSet

    T, K = plan.u_bk.shape
    bs = set(grid.bs_blocks)
    tg = grid.tg_block
    roots = np.full((T, K), -1, dtype=int)
    for t in range(T):
        dsu = DisjointSet(range(K))
        for li, ln in enumerate(grid.feeder.lines):
            if ln.switchable and plan.u_line[t, li]:
                a, b = grid.line_blocks[ln.id]
                dsu.union(a, b)
        groups: dict = {}
        for k in range(K):
            if plan.u_bk[t, k]:
                groups.setdefault(dsu.find(k), []).append(k)
        for members in groups.values():
            sources = [k for k in members if k in bs]
            if not sources:
                raise ValueError(f"energized island {members} at step {t} has no BS block")
            root = tg if tg in sources else min(sources)
            for k in members:
                roots[t, k] = root
    return roots


def extract_labels(plan: "RestorationPlan", grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """(Y_root [T,K,R] one-hot, Y_sync [T,|E^SSW|] closing events) from a plan."""
    roots = island_roots(plan, grid)
    bs = list(grid.bs_blocks)
    T, K = roots.shape
    y_root = np.zeros((T, K, 1 + len(bs)))
    for t in range(T):
        for k in range(K):
            r = 0 if roots[t, k] < 0 else 1 + bs.index(roots[t, k])
            y_root[t, k, r] = 1.0
    edges = grid.backbone.ssw_edges
    y_sync = np.zeros((T, len(edges)))
    for j, e in enumerate(edges):
        idx = [grid.feeder.line_pos[lid] for lid in grid.backbone.edges[e].lines
               if grid.feeder.line(lid).kind == "SSW"]
        closed = plan.u_line[:, idx].max(axis=1) if idx else np.zeros(T)
        prev = np.concatenate([[0], closed[:-1]])
        y_sync[:, j] = (closed - prev) > 0
    return y_root, y_sync
