"""Feasibility resolution of root/sync logits into safe island labels and SSW
closures, with straight-through wrapping, training metrics and warm-start
extraction.

Root labels are indices into ``R = {0} + BS blocks``: 0 means de-energized and
``1 + i`` means the i-th BS block in ascending id order.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .scenario import Scenario
from .sync_structure import ModeCatalogue
from .topology import Grid
from .unionfind import DisjointSet

if TYPE_CHECKING:  # pragma: no cover
    from .optimizer import PartialAssignment


# --------------------------------------------------------------------------- small pieces


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def assign_root(p: Sequence[float], lam: float = 0.5, tg_label: int | None = None,
                tg_available: bool = True) -> int:
    """Root label for one block from its probability vector.

    While the TG is unavailable its label is never selected.
    """
    p = np.asarray(p, dtype=float)
    if tg_label is not None and tg_available and p[tg_label] > lam:
        return int(tg_label)
    if p[0] > lam:
        return 0
    if tg_label is not None and not tg_available:
        p = p.copy()
        p[tg_label] = -np.inf
    return int(np.argmax(p))


def find(rho: np.ndarray, x: int) -> int:
    while rho[x] != x:
        x = int(rho[x])
    return int(x)


def compress(rho: np.ndarray) -> np.ndarray:
    out = np.array(rho, dtype=int)
    for x in range(len(out)):
        out[x] = find(out, x)
    return out


def unite(rho: np.ndarray, i: int, j: int, tg_labels: Sequence[int] = ()) -> np.ndarray:
    """Merge root labels i and j; a TG root always survives, else the smaller label."""
    if i == j:
        raise ValueError("cannot unite a label with itself")
    out = np.array(rho, dtype=int)
    if i in tg_labels:
        out[j] = i
    elif j in tg_labels:
        out[i] = j
    else:
        out[max(i, j)] = min(i, j)
    return compress(out)


# --------------------------------------------------------------------------- state and outputs


@dataclass(eq=False)
class ResolutionState:
    labels: np.ndarray  # [K] root label per block
    closed: np.ndarray  # [E] SSW edge indicators
    rho: np.ndarray  # [R] representative map

    def copy(self) -> "ResolutionState":
        return ResolutionState(self.labels.copy(), self.closed.copy(), self.rho.copy())


@dataclass(eq=False)
class FeasibleOutputs:
    y_root: np.ndarray  # [T, K, R]
    y_sync: np.ndarray  # [T, E]

    @property
    def labels(self) -> np.ndarray:
        return self.y_root.argmax(axis=2)

    def to_dict(self) -> dict:
        T, K, R = self.y_root.shape
        return {
            "shape": {"T": T, "K": K, "R": R, "E": int(self.y_sync.shape[1])},
            "labels": self.labels.tolist(),
            "y_sync": self.y_sync.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeasibleOutputs":
        shape = data["shape"]
        labels = np.array(data["labels"], dtype=int).reshape(shape["T"], shape["K"])
        y_root = np.zeros((shape["T"], shape["K"], shape["R"]))
        np.put_along_axis(y_root, labels[:, :, None], 1.0, axis=2)
        y_sync = np.array(data["y_sync"], dtype=float).reshape(shape["T"], shape["E"])
        return cls(y_root, y_sync)

    def save(self, path: str | pathlib.Path, extra: dict | None = None) -> None:
        data = self.to_dict()
        if extra:
            data.update(extra)
        pathlib.Path(path).write_text(json.dumps(data) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | pathlib.Path) -> "FeasibleOutputs":
        return cls.from_dict(json.loads(pathlib.Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Resolver:
    """Static data the operator needs: SSW edge endpoints and label roles."""

    edges: tuple[tuple[int, int], ...]  # block pair per SSW backbone edge
    bs_blocks: tuple[int, ...]
    tg_label: int | None
    n_blocks: int
    lam: float = 0.5

    @classmethod
    def from_grid(cls, grid: Grid, lam: float = 0.5) -> "Resolver":
        edges = tuple(grid.backbone.edges[e].pair for e in grid.backbone.ssw_edges)
        bs = tuple(grid.bs_blocks)
        tg = None if grid.tg_block is None else 1 + bs.index(grid.tg_block)
        return cls(edges, bs, tg, grid.n_blocks, lam)

    @property
    def n_labels(self) -> int:
        return 1 + len(self.bs_blocks)

    @property
    def tg_labels(self) -> tuple[int, ...]:
        return () if self.tg_label is None else (self.tg_label,)

    def check_shapes(self, z_root: np.ndarray, z_sync: np.ndarray) -> None:
        if z_root.ndim != 3 or z_root.shape[1:] != (self.n_blocks, self.n_labels):
            raise ValueError(f"root logits must be [T, {self.n_blocks}, {self.n_labels}], got {z_root.shape}")
        if z_sync.shape != (z_root.shape[0], len(self.edges)):
            raise ValueError(f"sync logits must be [T, {len(self.edges)}], got {z_sync.shape}")
        if not (np.all(np.isfinite(z_root)) and np.all(np.isfinite(z_sync))):
            raise ValueError("logits must be finite")

    def initial(self, z_root_0: np.ndarray, tg_available: bool) -> ResolutionState:
        probs = softmax(z_root_0)
        labels = np.array([assign_root(p, self.lam, self.tg_label, tg_available) for p in probs], dtype=int)
        return ResolutionState(labels, np.zeros(len(self.edges), dtype=int), np.arange(self.n_labels))

    def step(self, prev: ResolutionState, z_root_t: np.ndarray, z_sync_t: np.ndarray,
             tg_available: bool) -> tuple[ResolutionState, np.ndarray, np.ndarray]:
        rho = prev.rho.copy()
        lab = prev.labels
        canon = [find(rho, int(x)) for x in lab]
        productive = []
        for e, (k, k2) in enumerate(self.edges):
            if z_sync_t[e] <= 0 or prev.closed[e]:
                continue
            a, b = canon[k], canon[k2]
            if a != 0 and b != 0 and a != b:
                productive.append(e)
        productive.sort(key=lambda e: (-float(z_sync_t[e]), e))
        used: set[int] = set()
        y_sync = np.zeros(len(self.edges))
        closed = prev.closed.copy()
        for e in productive:
            k, k2 = self.edges[e]
            pair = {canon[k], canon[k2]}
            if pair & used:
                continue
            used |= pair
            y_sync[e] = 1.0
            closed[e] = 1
            rho = unite(rho, canon[k], canon[k2], self.tg_labels)
        probs = softmax(z_root_t)
        labels = np.array(
            [assign_root(probs[k], self.lam, self.tg_label, tg_available) if lab[k] == 0 else find(rho, int(lab[k]))
             for k in range(self.n_blocks)],
            dtype=int,
        )
        y_root = np.zeros((self.n_blocks, self.n_labels))
        y_root[np.arange(self.n_blocks), labels] = 1.0
        return ResolutionState(labels, closed, rho), y_root, y_sync

    def sequence(self, z_root: np.ndarray, z_sync: np.ndarray,
                 u_tg: Sequence[int] | None = None) -> tuple[FeasibleOutputs, ResolutionState]:
        z_root = np.asarray(z_root, dtype=float)
        z_sync = np.asarray(z_sync, dtype=float)
        self.check_shapes(z_root, z_sync)
        T = z_root.shape[0]
        u_tg = np.ones(T, dtype=int) if u_tg is None else np.asarray(u_tg, dtype=int)
        y_root = np.zeros((T, self.n_blocks, self.n_labels))
        y_sync = np.zeros((T, len(self.edges)))
        state = self.initial(z_root[0], bool(u_tg[0]))
        y_root[0, np.arange(self.n_blocks), state.labels] = 1.0
        for t in range(1, T):
            state, y_root[t], y_sync[t] = self.step(state, z_root[t], z_sync[t], bool(u_tg[t]))
        return FeasibleOutputs(y_root, y_sync), state


def resolve_step(resolver: Resolver, prev: ResolutionState, z_root_t, z_sync_t, tg_available: bool = True):
    return resolver.step(prev, np.asarray(z_root_t, float), np.asarray(z_sync_t, float), tg_available)


def resolve_sequence(resolver: Resolver, z_root, z_sync, u_tg=None):
    return resolver.sequence(z_root, z_sync, u_tg)


def sync_matrices(outputs: FeasibleOutputs, resolver: Resolver, u_tg: Sequence[int]) -> np.ndarray:
    """Per-step BS-by-BS sync matrices implied by the accepted closures.

    Each closure unites the islands its endpoint blocks carried one step
    earlier; BS blocks share an island when their own root labels do.
    """
    T = outputs.y_root.shape[0]
    n = len(resolver.bs_blocks)
    labels = outputs.labels
    dsu = DisjointSet(range(resolver.n_labels))
    out = np.zeros((T, n, n), dtype=np.int8)
    for t in range(T):
        if t > 0:
            for e in np.flatnonzero(outputs.y_sync[t] > 0.5):
                k, k2 = resolver.edges[e]
                a, b = int(labels[t - 1, k]), int(labels[t - 1, k2])
                if a and b:
                    dsu.union(a, b)
        for i in range(n):
            for j in range(i + 1, n):
                if resolver.tg_label in (i + 1, j + 1) and not u_tg[t]:
                    continue
                if dsu.find(i + 1) == dsu.find(j + 1):
                    out[t, i, j] = out[t, j, i] = 1
    return out


# --------------------------------------------------------------------------- STE and metrics


@dataclass(frozen=True, eq=False)
class SteOutput:
    """Forward value plus the soft array handed to any derivative consumer."""

    forward: np.ndarray
    soft: np.ndarray


def ste_wrap(hard: np.ndarray, soft: np.ndarray) -> SteOutput:
    hard = np.asarray(hard, dtype=float)
    soft = np.asarray(soft, dtype=float)
    if hard.shape != soft.shape:
        raise ValueError(f"shape mismatch: {hard.shape} vs {soft.shape}")
    # h + (g - stopgrad(g)) evaluates to h exactly
    return SteOutput(hard + (soft - soft), soft)


def sigmoid_grad(z: np.ndarray) -> np.ndarray:
    s = sigmoid(z)
    return s * (1.0 - s)


@dataclass(frozen=True)
class Metrics:
    j_root: float
    j_sync: float
    j_spar: float
    j_temp: float
    total: float


def metrics(y_root, y_sync, ybar_root, ybar_sync, gamma: float = 1.0, eta: float = 1.0) -> Metrics:
    y_root = np.asarray(y_root, float)
    ybar_root = np.asarray(ybar_root, float)
    y_sync = np.asarray(y_sync, float)
    ybar_sync = np.asarray(ybar_sync, float)
    if y_root.shape != ybar_root.shape or y_sync.shape != ybar_sync.shape:
        raise ValueError("prediction and label shapes differ")
    T, K, R = y_root.shape
    if T < 2:
        raise ValueError("temporal churn needs at least two steps")
    E = y_sync.shape[1]
    j_root = float(np.abs(y_root - ybar_root).sum() / (T * K * R))
    j_sync = float(np.abs(y_sync - ybar_sync).sum() / (T * E)) if E else 0.0
    j_spar = float(y_sync.sum() / (T * E)) if E else 0.0
    j_temp = float(np.abs(np.diff(y_root, axis=0)).sum() / ((T - 1) * K * R))
    return Metrics(j_root, j_sync, j_spar, j_temp, j_root + j_sync + gamma * j_spar + eta * j_temp)


# --------------------------------------------------------------------------- warm starts


def extract_warm_start(outputs: FeasibleOutputs, catalogue: ModeCatalogue, grid: Grid,
                       u_tg: Sequence[int]) -> "PartialAssignment":
    """Sync-family warm start from resolved outputs.

    When some step's island partition is not a catalogue mode only the SSW
    schedule is kept.
    """
    from .optimizer import PartialAssignment

    resolver = Resolver.from_grid(grid)
    u_tg = np.asarray(u_tg, dtype=int)
    T = outputs.y_root.shape[0]
    feeder = grid.feeder
    ssw_lines = [i for i, ln in enumerate(feeder.lines) if ln.kind == "SSW"]
    u_ssw = np.zeros((T, len(ssw_lines)), dtype=np.int8)
    cum = np.cumsum(outputs.y_sync > 0.5, axis=0) > 0
    for j, e in enumerate(grid.backbone.ssw_edges):
        ids = [lid for lid in grid.backbone.edges[e].lines if feeder.line(lid).kind == "SSW"]
        if ids:
            col = ssw_lines.index(feeder.line_pos[min(ids, key=feeder.line_pos.get)])
            u_ssw[:, col] = cum[:, j]
    sync = sync_matrices(outputs, resolver, u_tg)
    bs = list(grid.bs_blocks)
    n_modes = len(catalogue)
    n_classes = max(1, len(bs))
    u_mode = np.zeros((T, n_modes), dtype=np.int8)
    u_class = np.zeros((T, n_classes), dtype=np.int8)
    from .sync_structure import mode_from_sync_matrix

    for t in range(T):
        active = catalogue.bs.active(u_tg[t])
        if not active:
            continue
        mode = mode_from_sync_matrix(sync[t], bs, active)
        idx = None if mode is None else catalogue.index_of(mode)
        if idx is None:
            return PartialAssignment("CAWS", u_ssw=u_ssw,
                                     note=f"step {t}: island partition is not a catalogue mode; SSW schedule only")
        u_mode[t, idx] = 1
        u_class[t, mode.klass - 1] = 1
    return PartialAssignment("CAWS", u_sync=sync, u_ssw=u_ssw, u_mode=u_mode, u_class=u_class)


# --------------------------------------------------------------------------- logit providers


@dataclass(frozen=True)
class HeuristicLogitProvider:
    """Distance-and-demand scores standing in for a trained network.

    A block prefers the nearest available root (ties to larger rating); the
    dead label wins on the damaged block and before a block's earliest
    reach. An SSW edge scores positive once both endpoints can be reached,
    scaled by the demand it would help cover.
    """

    scale: float = 4.0

    def __call__(self, grid: Grid, scenario: Scenario) -> tuple[np.ndarray, np.ndarray]:
        T, K = scenario.horizon, grid.n_blocks
        bs = list(grid.bs_blocks)
        R = 1 + len(bs)
        dist = _hop_distances(grid, scenario.damaged)
        u_tg = scenario.u_tg() if grid.tg_block is not None else np.zeros(T, dtype=int)
        tg_ret = int(np.flatnonzero(u_tg)[0]) if u_tg.any() else None
        ready = np.full((len(bs), K), np.inf)  # first step root i could reach block k
        for i, r in enumerate(bs):
            start = 0 if r != grid.tg_block else tg_ret
            if start is None:
                continue
            ready[i] = start + dist[r]
        z_root = np.zeros((T, K, R))
        for k in range(K):
            reach = ready[:, k]
            for t in range(T):
                if k == scenario.damaged or not np.isfinite(reach).any() or t < reach.min():
                    z_root[t, k, 0] = self.scale
                    continue
                for i in range(len(bs)):
                    if t >= reach[i]:
                        z_root[t, k, 1 + i] = self.scale - reach[i] + 0.01 * i
        z_sync = np.full((T, len(grid.backbone.ssw_edges)), -self.scale)
        demand = np.zeros(K)
        for ld in grid.feeder.loads.values():
            demand[grid.block_of(ld.bus)] += ld.p_nom.sum()
        for j, e in enumerate(grid.backbone.ssw_edges):
            a, b = grid.backbone.edges[e].pair
            if scenario.damaged in (a, b):
                continue
            ra, rb = ready[:, a].min(), ready[:, b].min()
            if not (np.isfinite(ra) and np.isfinite(rb)):
                continue
            start = int(max(ra, rb)) + 1
            z_sync[start:, j] = 1.0 + demand[a] + demand[b]
        return z_root, z_sync


def _hop_distances(grid: Grid, damaged: int | None) -> np.ndarray:
    """All-pairs hop distances on the backbone, avoiding the damaged block."""
    K = grid.n_blocks
    dist = np.full((K, K), np.inf)
    adj: dict[int, list[int]] = {k: [] for k in range(K)}
    for edge in grid.backbone.edges:
        a, b = edge.pair
        adj[a].append(b)
        adj[b].append(a)
    for s in range(K):
        if s == damaged:
            continue
        dist[s, s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v != damaged and not np.isfinite(dist[s, v]):
                        dist[s, v] = dist[s, u] + 1
                        nxt.append(v)
            frontier = nxt
    return dist


# --------------------------------------------------------------------------- logit files

_MAGIC = b"SSLG"


def save_logits(path: str | pathlib.Path, z_root: np.ndarray, z_sync: np.ndarray) -> None:
    """Binary (default) or CSV with a one-line JSON shape header (``.csv``)."""
    path = pathlib.Path(path)
    T, K, R = z_root.shape
    header = {"T": T, "K": K, "R": R, "E": int(z_sync.shape[1])}
    if path.suffix == ".csv":
        lines = ["# " + json.dumps(header)]
        for t in range(T):
            for k in range(K):
                lines.append(",".join(["root", str(t), str(k)] + [repr(float(x)) for x in z_root[t, k]]))
        for t in range(T):
            lines.append(",".join(["sync", str(t), ""] + [repr(float(x)) for x in z_sync[t]]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return
    head = json.dumps(header).encode("utf-8")
    body = np.asarray(z_root, "<f8").tobytes() + np.asarray(z_sync, "<f8").tobytes()
    path.write_bytes(_MAGIC + len(head).to_bytes(4, "little") + head + body)


def load_logits(path: str | pathlib.Path) -> tuple[np.ndarray, np.ndarray]:
    path = pathlib.Path(path)
    if path.suffix == ".csv":
        text = path.read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith("#"):
            raise ValueError("logit CSV must start with a '# {shape}' header")
        shape = json.loads(text[0][1:])
        z_root = np.zeros((shape["T"], shape["K"], shape["R"]))
        z_sync = np.zeros((shape["T"], shape["E"]))
        for line in text[1:]:
            if not line.strip():
                continue
            kind, t, k, *vals = line.split(",")
            if kind == "root":
                z_root[int(t), int(k)] = [float(v) for v in vals]
            elif kind == "sync":
                z_sync[int(t)] = [float(v) for v in vals] if shape["E"] else []
            else:
                raise ValueError(f"unknown logit row kind {kind!r}")
        return z_root, z_sync
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise ValueError("not a logit tensor file")
    n = int.from_bytes(blob[4:8], "little")
    shape = json.loads(blob[8 : 8 + n].decode("utf-8"))
    body = np.frombuffer(blob[8 + n :], dtype="<f8")
    size = shape["T"] * shape["K"] * shape["R"]
    if body.size != size + shape["T"] * shape["E"]:
        raise ValueError("logit payload does not match its shape header")
    return body[:size].reshape(shape["T"], shape["K"], shape["R"]).copy(), body[size:].reshape(shape["T"], shape["E"]).copy()
