"""Synchronization structure: SSW configurations, system modes and classes,
and the pairwise-merge safety test."""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from .topology import BackboneGraph, Grid, enumerate_simple_paths
from .unionfind import DisjointSet


@dataclass(frozen=True)
class BlackStartSets:
    bess: tuple[int, ...]
    tg: tuple[int, ...]

    def __post_init__(self):
        if set(self.bess) & set(self.tg):
            raise ValueError("a block cannot be both BESS-rooted and TG-connected")

    @classmethod
    def from_grid(cls, grid: Grid) -> "BlackStartSets":
        tg = () if grid.tg_block is None else (grid.tg_block,)
        return cls(tuple(grid.bess_blocks), tg)

    @property
    def all(self) -> tuple[int, ...]:
        return tuple(sorted(self.bess + self.tg))

    def active(self, u_tg: int | bool) -> tuple[int, ...]:
        return self.all if u_tg else tuple(sorted(self.bess))


Pair = tuple[int, int]


@dataclass(frozen=True)
class SswConfigSet:
    """Per SSW backbone edge, the admissible BS pairs (``None`` is the open state)."""

    edges: tuple[int, ...]
    options: tuple[tuple[Pair | None, ...], ...]

    def __getitem__(self, edge: int) -> tuple[Pair | None, ...]:
        return self.options[self.edges.index(edge)]

    def vectors(self) -> Iterable[tuple[Pair | None, ...]]:
        return itertools.product(*self.options)

    @property
    def pairs(self) -> frozenset[Pair]:
        return frozenset(p for opts in self.options for p in opts if p is not None)


def feasible_configurations(g: BackboneGraph, bs: BlackStartSets, u_tg: int | bool) -> SswConfigSet:
    active = bs.active(u_tg)
    edges = g.ssw_edges
    found: dict[int, set[Pair]] = {e: set() for e in edges}
    ssw_pairs = {g.edges[e].pair: e for e in edges}
    for k, k2 in itertools.combinations(active, 2):
        blocked = frozenset(active) - {k, k2}
        for path in enumerate_simple_paths(g, k, k2, blocked):
            used = [ssw_pairs[p] for p in path.edge_set if p in ssw_pairs]
            if len(used) == 1:
                found[used[0]].add((k, k2))
    options = tuple((None,) + tuple(sorted(found[e])) for e in edges)
    return SswConfigSet(tuple(edges), options)


@dataclass(frozen=True, order=True)
class Mode:
    """A partition of the active BS blocks into synchronized islands."""

    parts: tuple[tuple[int, ...], ...]

    @classmethod
    def from_parts(cls, parts: Iterable[Iterable[int]]) -> "Mode":
        clean = [tuple(sorted(p)) for p in parts]
        if any(not p for p in clean):
            raise ValueError("mode parts must be non-empty")
        flat = [k for p in clean for k in p]
        if len(flat) != len(set(flat)):
            raise ValueError("mode parts must be disjoint")
        return cls(tuple(sorted(clean)))

    @property
    def klass(self) -> int:
        return len(self.parts)

    @cached_property
    def blocks(self) -> frozenset[int]:
        return frozenset(k for p in self.parts for k in p)

    @cached_property
    def _owner(self) -> dict[int, int]:
        return {k: i for i, p in enumerate(self.parts) for k in p}

    def same_part(self, a: int, b: int) -> bool:
        own = self._owner
        return a in own and b in own and own[a] == own[b]

    def __str__(self) -> str:
        return "{" + ", ".join("{" + ",".join(f"k{k}" for k in p) + "}" for p in self.parts) + "}"


def mode_of(omega: Sequence[Pair | None], bs: BlackStartSets, u_tg: int | bool) -> Mode:
    """Connected components of the sync graph induced by a configuration vector."""
    active = bs.active(u_tg)
    dsu = DisjointSet(active)
    for pair in omega:
        if pair is None:
            continue
        a, b = pair
        if a not in dsu or b not in dsu:
            raise ValueError(f"configuration {pair} touches an inactive BS block")
        dsu.union(a, b)
    return Mode.from_parts(dsu.groups())


def enumerate_modes(configs: SswConfigSet, bs: BlackStartSets, u_tg: int | bool) -> dict[Mode, int]:
    """Image of mode_of over every configuration vector, with realization counts."""
    counts: Counter[Mode] = Counter()
    for vec in configs.vectors():
        counts[mode_of(vec, bs, u_tg)] += 1
    return dict(counts)


def modes_by_class(modes: Iterable[Mode]) -> dict[int, list[Mode]]:
    out: dict[int, list[Mode]] = {}
    for m in sorted(modes):
        out.setdefault(m.klass, []).append(m)
    return dict(sorted(out.items(), reverse=True))


@dataclass(frozen=True)
class CatalogueEntry:
    mode: Mode
    tg_present: bool
    realizations: int


@dataclass(frozen=True)
class ModeCatalogue:
    """Union of the mode sets for u^TG = 0 and u^TG = 1, in a fixed order."""

    bs: BlackStartSets
    entries: tuple[CatalogueEntry, ...]
    configs: Mapping[int, SswConfigSet] = field(compare=False)

    @classmethod
    def build(cls, grid: Grid, tg_flags: Sequence[int] = (0, 1)) -> "ModeCatalogue":
        bs = BlackStartSets.from_grid(grid)
        entries: dict[Mode, CatalogueEntry] = {}
        configs = {}
        for flag in tg_flags:
            cfg = feasible_configurations(grid.backbone, bs, flag)
            configs[flag] = cfg
            for mode, count in enumerate_modes(cfg, bs, flag).items():
                present = bool(flag) and bool(bs.tg)
                if mode in entries:
                    old = entries[mode]
                    entries[mode] = CatalogueEntry(mode, old.tg_present, old.realizations + count)
                else:
                    entries[mode] = CatalogueEntry(mode, present, count)
        ordered = sorted(entries.values(), key=lambda e: (-e.mode.klass, e.tg_present, e.mode.parts))
        return cls(bs, tuple(ordered), configs)

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def modes(self) -> tuple[Mode, ...]:
        return tuple(e.mode for e in self.entries)

    @cached_property
    def _index(self) -> dict[Mode, int]:
        return {m: i for i, m in enumerate(self.modes)}

    def index_of(self, mode: Mode) -> int | None:
        return self._index.get(mode)

    def by_class(self) -> dict[int, list[Mode]]:
        return modes_by_class(self.modes)

    def class_histogram(self) -> dict[int, int]:
        return {c: len(ms) for c, ms in self.by_class().items()}

    @property
    def n_classes(self) -> int:
        return len(self.bs.all)

    def to_json(self) -> list[dict]:
        return [
            {
                "index": i,
                "parts": [list(p) for p in e.mode.parts],
                "class": e.mode.klass,
                "tg_present": e.tg_present,
                "realizations": e.realizations,
            }
            for i, e in enumerate(self.entries)
        ]


# --------------------------------------------------------------------------- sync matrices


def sync_matrix_from_mode(mode: Mode, bs_blocks: Sequence[int]) -> np.ndarray:
    n = len(bs_blocks)
    mat = np.zeros((n, n), dtype=np.int8)
    for i, j in itertools.combinations(range(n), 2):
        if mode.same_part(bs_blocks[i], bs_blocks[j]):
            mat[i, j] = mat[j, i] = 1
    return mat


def mode_from_sync_matrix(mat: np.ndarray, bs_blocks: Sequence[int], active: Iterable[int]) -> Mode | None:
    """The partition witnessed by ``mat`` over ``active``, or None if it is not transitive."""
    active = sorted(active)
    pos = {k: i for i, k in enumerate(bs_blocks)}
    dsu = DisjointSet(active)
    for a, b in itertools.combinations(active, 2):
        if mat[pos[a], pos[b]]:
            dsu.union(a, b)
    mode = Mode.from_parts(dsu.groups())
    for a, b in itertools.combinations(active, 2):
        if bool(mat[pos[a], pos[b]]) != mode.same_part(a, b):
            return None
    return mode


@dataclass(frozen=True)
class SafetyVerdict:
    violations: tuple[tuple[int, int, int], ...] = ()
    monotonicity: tuple[tuple[int, int], ...] = ()

    @property
    def safe(self) -> bool:
        return not self.violations and not self.monotonicity


def check_transition_safety(prev: np.ndarray, nxt: np.ndarray, labels: Sequence[int] | None = None) -> SafetyVerdict:
    """Pairwise-merge test: du[k,k'] + du[k,k''] - prev[k',k''] <= 1 for distinct triples.

    ``labels`` maps matrix positions to block ids in the report.
    """
    prev = np.asarray(prev, dtype=int)
    nxt = np.asarray(nxt, dtype=int)
    if prev.shape != nxt.shape or prev.ndim != 2 or prev.shape[0] != prev.shape[1]:
        raise ValueError("sync matrices must be square and of equal shape")
    n = prev.shape[0]
    names = list(range(n)) if labels is None else list(labels)
    du = nxt - prev
    mono = tuple((names[i], names[j]) for i, j in zip(*np.nonzero(du < 0)) if i < j)
    bad = []
    for k in range(n):
        for a in range(n):
            if a == k or du[k, a] <= 0:
                continue
            for b in range(a + 1, n):
                if b == k:
                    continue
                if du[k, a] + du[k, b] - prev[a, b] > 1:
                    bad.append((names[k], names[a], names[b]))
    return SafetyVerdict(tuple(bad), mono)
