"""Feeder ingestion, bus-block partition and the block-level backbone graph."""

from __future__ import annotations

import hashlib
from importlib import resources
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
import pathlib

import numpy as np

from .unionfind import DisjointSet

PHASE_NAMES = "abc"
LINE_KINDS = ("LN", "ESW", "SSW")
LOAD_KINDS = ("CL", "NL")
SECTIONS = ("base", "buses", "lines", "devices", "loads", "profiles")


class FeederFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name is not None:
            where.append(f"field {field_name!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field_name = field_name


class FeederValidationError(ValueError):
    def __init__(self, issues: list[str]):
        super().__init__("invalid feeder:\n  " + "\n  ".join(issues))
        self.issues = list(issues)


def parse_phases(text: str) -> tuple[int, ...]:
    text = text.strip().lower()
    if not text or any(ch not in PHASE_NAMES for ch in text) or len(set(text)) != len(text):
        raise ValueError(f"bad phase set {text!r}")
    return tuple(sorted(PHASE_NAMES.index(ch) for ch in text))


def phase_label(phases: tuple[int, ...]) -> str:
    return "".join(PHASE_NAMES[p] for p in phases)


@dataclass(frozen=True)
class Bus:
    id: int
    phases: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Line:
    id: str
    from_bus: int
    to_bus: int
    phases: tuple[int, ...]
    kind: str
    r: np.ndarray
    x: np.ndarray
    p_max: np.ndarray
    q_max: np.ndarray

    @property
    def switchable(self) -> bool:
        return self.kind != "LN"


@dataclass(frozen=True)
class TransmissionTie:
    id: str
    bus: int
    s_max: float


@dataclass(frozen=True)
class Battery:
    id: str
    bus: int
    s_nom: float
    e_nom: float
    soc_init: float = 0.9
    soc_min: float | None = None
    soc_max: float | None = None
    droop: float | None = None


@dataclass(frozen=True)
class Photovoltaic:
    id: str
    bus: int
    s_nom: float
    pf: float = 0.943

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.pf))


@dataclass(frozen=True, eq=False)
class Load:
    bus: int
    kind: str
    p_nom: np.ndarray  # per phase, zero on absent phases
    pf: float = 0.911

    @property
    def tan_phi(self) -> float:
        return math.tan(math.acos(self.pf))


@dataclass(eq=False)
class Feeder:
    buses: dict[int, Bus]
    lines: tuple[Line, ...]
    tg: TransmissionTie | None
    batteries: tuple[Battery, ...] = ()
    pvs: tuple[Photovoltaic, ...] = ()
    loads: dict[int, Load] = field(default_factory=dict)
    profiles: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    base: dict[str, float] = field(default_factory=lambda: {"s_base_mva": 1.0})
    name: str = "feeder"

    @cached_property
    def bus_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.buses))

    @cached_property
    def bus_pos(self) -> dict[int, int]:
        return {b: i for i, b in enumerate(self.bus_ids)}

    @cached_property
    def line_pos(self) -> dict[str, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    def line(self, line_id: str) -> Line:
        return self.lines[self.line_pos[line_id]]

    @cached_property
    def battery_at(self) -> dict[int, Battery]:
        return {b.bus: b for b in self.batteries}

    @cached_property
    def pv_at(self) -> dict[int, Photovoltaic]:
        return {p.bus: p for p in self.pvs}

    @property
    def seasons(self) -> tuple[str, ...]:
        return tuple(self.profiles)

    def digest(self) -> str:
        return hashlib.sha256(dump_feeder(self).encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------- parsing


def _floats(text: str, count: int, line_no: int, field_name: str) -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.split()]
    except ValueError:
        raise FeederFormatError(f"expected {count} numbers, got {text!r}", line_no, field_name) from None
    if len(vals) != count:
        raise FeederFormatError(f"expected {count} numbers, got {len(vals)}", line_no, field_name)
    return np.array(vals, dtype=float)


def _keyvals(tokens: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise FeederFormatError(f"expected key=value, got {tok!r}", line_no)
        key, val = tok.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _num(kv: dict[str, str], key: str, line_no: int, default: float | None = None, required: bool = True):
    if key not in kv:
        if required and default is None:
            raise FeederFormatError("missing value", line_no, key)
        return default
    try:
        return float(kv[key])
    except ValueError:
        raise FeederFormatError(f"not a number: {kv[key]!r}", line_no, key) from None


def parse_feeder(text: str, name: str = "feeder") -> Feeder:
    """Parse the sectioned feeder text format and validate the result."""
    section = None
    buses: dict[int, Bus] = {}
    lines: list[Line] = []
    tg = None
    batteries: list[Battery] = []
    pvs: list[Photovoltaic] = []
    loads: dict[int, Load] = {}
    profiles: dict[str, dict[str, np.ndarray]] = {}
    base: dict[str, float] = {}

    for line_no, raw in enumerate(io.StringIO(text), start=1):
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip().lower()
            if section not in SECTIONS:
                raise FeederFormatError(f"unknown section [{section}]", line_no)
            continue
        if section is None:
            raise FeederFormatError("record outside of any section", line_no)
        if section == "base":
            if "=" not in stripped:
                raise FeederFormatError("expected key = value", line_no)
            key, val = (s.strip() for s in stripped.split("=", 1))
            try:
                base[key] = float(val)
            except ValueError:
                raise FeederFormatError(f"not a number: {val!r}", line_no, key) from None
            continue

        cells = [c.strip() for c in stripped.split(",")]
        if section == "buses":
            if len(cells) != 2:
                raise FeederFormatError("bus record needs: id, phases", line_no)
            try:
                bus_id = int(cells[0])
            except ValueError:
                raise FeederFormatError(f"bus id must be an integer: {cells[0]!r}", line_no, "id") from None
            try:
                phases = parse_phases(cells[1])
            except ValueError as exc:
                raise FeederFormatError(str(exc), line_no, "phases") from None
            if bus_id in buses:
                raise FeederFormatError(f"duplicate bus {bus_id}", line_no, "id")
            buses[bus_id] = Bus(bus_id, phases)
        elif section == "lines":
            if len(cells) != 9:
                raise FeederFormatError(
                    "line record needs: id, from, to, phases, class, r(9), x(9), p_max(3), q_max(3)", line_no
                )
            lid = cells[0]
            try:
                fb, tb = int(cells[1]), int(cells[2])
            except ValueError:
                raise FeederFormatError("line endpoints must be integer bus ids", line_no, "from/to") from None
            try:
                phases = parse_phases(cells[3])
            except ValueError as exc:
                raise FeederFormatError(str(exc), line_no, "phases") from None
            kind = cells[4].upper()
            if kind not in LINE_KINDS:
                raise FeederFormatError(f"class must be LN, ESW or SSW, got {cells[4]!r}", line_no, "class")
            r = _floats(cells[5], 9, line_no, "r_matrix").reshape(3, 3)
            x = _floats(cells[6], 9, line_no, "x_matrix").reshape(3, 3)
            p_max = _floats(cells[7], 3, line_no, "p_max")
            q_max = _floats(cells[8], 3, line_no, "q_max")
            lines.append(Line(lid, fb, tb, phases, kind, r, x, p_max, q_max))
        elif section == "devices":
            kind = cells[0].upper()
            if len(cells) < 3:
                raise FeederFormatError("device record needs: kind, id, bus, key=value...", line_no)
            try:
                bus = int(cells[2])
            except ValueError:
                raise FeederFormatError("device bus must be an integer", line_no, "bus") from None
            kv = _keyvals(cells[3:], line_no)
            if kind == "TG":
                if tg is not None:
                    raise FeederFormatError("more than one TG device", line_no)
                tg = TransmissionTie(cells[1], bus, _num(kv, "s_max", line_no))
            elif kind == "BESS":
                batteries.append(
                    Battery(
                        cells[1],
                        bus,
                        s_nom=_num(kv, "s_nom", line_no),
                        e_nom=_num(kv, "e_nom", line_no),
                        soc_init=_num(kv, "soc_init", line_no, 0.9),
                        soc_min=_num(kv, "soc_min", line_no, required=False),
                        soc_max=_num(kv, "soc_max", line_no, required=False),
                        droop=_num(kv, "droop", line_no, required=False),
                    )
                )
            elif kind == "PV":
                pvs.append(Photovoltaic(cells[1], bus, _num(kv, "s_nom", line_no), _num(kv, "pf", line_no, 0.943)))
            else:
                raise FeederFormatError(f"unknown device kind {cells[0]!r}", line_no, "kind")
        elif section == "loads":
            if len(cells) != 6:
                raise FeederFormatError("load record needs: bus, class, p_a, p_b, p_c, pf", line_no)
            try:
                bus = int(cells[0])
                p_nom = np.array([float(c) for c in cells[2:5]])
                pf = float(cells[5])
            except ValueError:
                raise FeederFormatError("bad numeric field in load record", line_no) from None
            kind = cells[1].upper()
            if kind not in LOAD_KINDS:
                raise FeederFormatError(f"load class must be CL or NL, got {cells[1]!r}", line_no, "class")
            if bus in loads:
                raise FeederFormatError(f"duplicate load at bus {bus}", line_no, "bus")
            loads[bus] = Load(bus, kind, p_nom, pf)
        elif section == "profiles":
            if len(cells) != 3:
                raise FeederFormatError("profile record needs: season, kind, 24 values", line_no)
            season, kind = cells[0].lower(), cells[1].lower()
            if kind not in ("load", "pv"):
                raise FeederFormatError(f"profile kind must be load or pv, got {cells[1]!r}", line_no, "kind")
            profiles.setdefault(season, {})[kind] = _floats(cells[2], 24, line_no, "values")

    if not base:
        base = {"s_base_mva": 1.0}
    feeder = Feeder(
        buses=dict(sorted(buses.items())),
        lines=tuple(lines),
        tg=tg,
        batteries=tuple(batteries),
        pvs=tuple(pvs),
        loads=dict(sorted(loads.items())),
        profiles=profiles,
        base=base,
        name=name,
    )
    validate_feeder(feeder)
    return feeder


def load_feeder(source: str | pathlib.Path) -> Feeder:
    """Read a feeder document from a path (or raw text containing a section header)."""
    if isinstance(source, str) and "[" in source and "\n" in source:
        return parse_feeder(source)
    path = pathlib.Path(source)
    return parse_feeder(path.read_text(encoding="utf-8"), name=path.stem)


def replica_feeder() -> Feeder:
    """The bundled 123-bus replica with its shipped profiles."""
    text = resources.files("ssdmgf").joinpath("data/replica123.feeder").read_text(encoding="utf-8")
    return parse_feeder(text, name="replica123")


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def dump_feeder(feeder: Feeder) -> str:
    out = ["[base]"]
    out += [f"{k} = {v!r}" for k, v in feeder.base.items()]
    out.append("\n[buses]")
    out += [f"{b.id}, {phase_label(b.phases)}" for b in feeder.buses.values()]
    out.append("\n[lines]")
    for ln in feeder.lines:
        out.append(
            f"{ln.id}, {ln.from_bus}, {ln.to_bus}, {phase_label(ln.phases)}, {ln.kind}, "
            f"{_fmt(ln.r)}, {_fmt(ln.x)}, {_fmt(ln.p_max)}, {_fmt(ln.q_max)}"
        )
    out.append("\n[devices]")
    if feeder.tg is not None:
        out.append(f"TG, {feeder.tg.id}, {feeder.tg.bus}, s_max={float(feeder.tg.s_max)!r}")
    for b in feeder.batteries:
        extra = "".join(
            f", {k}={float(getattr(b, k))!r}" for k in ("soc_min", "soc_max", "droop") if getattr(b, k) is not None
        )
        out.append(f"BESS, {b.id}, {b.bus}, s_nom={float(b.s_nom)!r}, e_nom={float(b.e_nom)!r}, soc_init={float(b.soc_init)!r}{extra}")
    for p in feeder.pvs:
        out.append(f"PV, {p.id}, {p.bus}, s_nom={float(p.s_nom)!r}, pf={float(p.pf)!r}")
    out.append("\n[loads]")
    for ld in feeder.loads.values():
        out.append(f"{ld.bus}, {ld.kind}, {float(ld.p_nom[0])!r}, {float(ld.p_nom[1])!r}, {float(ld.p_nom[2])!r}, {float(ld.pf)!r}")
    out.append("\n[profiles]")
    for season, kinds in feeder.profiles.items():
        for kind, vals in kinds.items():
            out.append(f"{season}, {kind}, {_fmt(vals)}")
    return "\n".join(out) + "\n"


def validate_feeder(feeder: Feeder) -> None:
    issues: list[str] = []
    buses = feeder.buses
    seen_lines = set()
    for ln in feeder.lines:
        if ln.id in seen_lines:
            issues.append(f"duplicate line id {ln.id}")
        seen_lines.add(ln.id)
        if ln.from_bus == ln.to_bus:
            issues.append(f"line {ln.id} is a self-loop")
        for end in (ln.from_bus, ln.to_bus):
            if end not in buses:
                issues.append(f"line {ln.id} references unknown bus {end}")
            elif not set(ln.phases) <= set(buses[end].phases):
                issues.append(f"line {ln.id} phases {phase_label(ln.phases)} not carried by bus {end}")
        for name, mat in (("r", ln.r), ("x", ln.x)):
            if not np.allclose(mat, mat.T, atol=1e-12):
                issues.append(f"line {ln.id} {name} matrix is not symmetric")
            absent = [p for p in range(3) if p not in ln.phases]
            if absent and (np.any(mat[absent, :] != 0) or np.any(mat[:, absent] != 0)):
                issues.append(f"line {ln.id} {name} matrix has entries outside its phase set")
    if feeder.tg is None:
        issues.append("exactly one TG attachment is required, found none")
    elif feeder.tg.bus not in buses:
        issues.append(f"TG references unknown bus {feeder.tg.bus}")
    for kind, devices in (("BESS", feeder.batteries), ("PV", feeder.pvs)):
        at = [d.bus for d in devices]
        if len(set(at)) != len(at):
            issues.append(f"two {kind} devices share a bus")
        ids = [d.id for d in devices]
        if len(set(ids)) != len(ids):
            issues.append(f"duplicate {kind} id")
        for d in devices:
            if d.bus not in buses:
                issues.append(f"{kind} {d.id} references unknown bus {d.bus}")
    for source_bus, label in [(b.bus, f"BESS {b.id}") for b in feeder.batteries] + (
        [(feeder.tg.bus, "TG")] if feeder.tg is not None else []
    ):
        if source_bus in buses and buses[source_bus].phases != (0, 1, 2):
            issues.append(f"{label} must sit on a three-phase bus")
    for b in feeder.batteries:
        if b.e_nom <= 0 or b.s_nom <= 0:
            issues.append(f"BESS {b.id} needs positive s_nom and e_nom")
    for ld in feeder.loads.values():
        if ld.bus not in buses:
            issues.append(f"load at unknown bus {ld.bus}")
            continue
        absent = [p for p in range(3) if p not in buses[ld.bus].phases]
        if np.any(ld.p_nom[absent] != 0):
            issues.append(f"load at bus {ld.bus} draws on a phase the bus does not have")
        if np.any(ld.p_nom < 0) or not 0 < ld.pf <= 1:
            issues.append(f"load at bus {ld.bus} needs non-negative demand and pf in (0, 1]")
    for season, kinds in feeder.profiles.items():
        for kind in ("load", "pv"):
            if kind not in kinds:
                issues.append(f"season {season} lacks a {kind} profile")
    if issues:
        raise FeederValidationError(issues)

    # structural checks that need the block partition
    part = partition_blocks(feeder)
    for ln in feeder.lines:
        if ln.switchable and part.tau[ln.from_bus] == part.tau[ln.to_bus]:
            issues.append(f"switchable line {ln.id} joins two buses of block k{part.tau[ln.from_bus]}")
    for k, buses_k in enumerate(part.blocks):
        if len(part.ln_lines[k]) != len(buses_k) - 1:
            issues.append(f"block k{k} is not radial over its non-switchable lines")
    if issues:
        raise FeederValidationError(issues)


# --------------------------------------------------------------------------- blocks & backbone


@dataclass(frozen=True)
class BlockPartition:
    blocks: tuple[tuple[int, ...], ...]
    tau: dict[int, int]
    ln_lines: tuple[tuple[str, ...], ...]
    esw_lines: tuple[tuple[str, ...], ...]
    ssw_lines: tuple[tuple[str, ...], ...]

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)


def partition_blocks(feeder: Feeder) -> BlockPartition:
    """Blocks are the connected components of the non-switchable line graph.

    Block k is numbered by the rank of its smallest bus id.
    """
    dsu = DisjointSet(feeder.bus_ids)
    for ln in feeder.lines:
        if ln.kind == "LN":
            dsu.union(ln.from_bus, ln.to_bus)
    blocks = tuple(dsu.groups())
    tau = {b: k for k, members in enumerate(blocks) for b in members}
    ln_lines: list[list[str]] = [[] for _ in blocks]
    esw: list[list[str]] = [[] for _ in blocks]
    ssw: list[list[str]] = [[] for _ in blocks]
    for ln in feeder.lines:
        ka, kb = tau[ln.from_bus], tau[ln.to_bus]
        if ln.kind == "LN":
            ln_lines[ka].append(ln.id)
        else:
            bucket = esw if ln.kind == "ESW" else ssw
            bucket[ka].append(ln.id)
            if kb != ka:
                bucket[kb].append(ln.id)
    return BlockPartition(
        blocks=blocks,
        tau=tau,
        ln_lines=tuple(tuple(x) for x in ln_lines),
        esw_lines=tuple(tuple(x) for x in esw),
        ssw_lines=tuple(tuple(x) for x in ssw),
    )


@dataclass(frozen=True)
class BackboneEdge:
    u: int
    v: int
    lines: tuple[str, ...]
    ssw: bool

    @property
    def pair(self) -> tuple[int, int]:
        return (self.u, self.v)


@dataclass(frozen=True)
class BackboneGraph:
    n_vertices: int
    edges: tuple[BackboneEdge, ...]

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        adj: list[set[int]] = [set() for _ in range(self.n_vertices)]
        for e in self.edges:
            adj[e.u].add(e.v)
            adj[e.v].add(e.u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {e.pair: i for i, e in enumerate(self.edges)}

    def edge_between(self, a: int, b: int) -> int | None:
        return self.edge_index.get((min(a, b), max(a, b)))

    @cached_property
    def ssw_edges(self) -> tuple[int, ...]:
        return tuple(i for i, e in enumerate(self.edges) if e.ssw)


def build_backbone(partition: BlockPartition, feeder: Feeder) -> BackboneGraph:
    """Block graph with one edge per connected block pair; parallel switchable
    lines collapse into that edge and are kept as back-references."""
    by_pair: dict[tuple[int, int], list[Line]] = {}
    for ln in feeder.lines:
        if not ln.switchable:
            continue
        a, b = partition.tau[ln.from_bus], partition.tau[ln.to_bus]
        by_pair.setdefault((min(a, b), max(a, b)), []).append(ln)
    edges = tuple(
        BackboneEdge(u, v, tuple(ln.id for ln in lns), any(ln.kind == "SSW" for ln in lns))
        for (u, v), lns in sorted(by_pair.items())
    )
    return BackboneGraph(partition.n_blocks, edges)


@dataclass(frozen=True)
class Path:
    vertices: tuple[int, ...]

    @property
    def vertex_set(self) -> frozenset[int]:
        return frozenset(self.vertices)

    @property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset((min(a, b), max(a, b)) for a, b in zip(self.vertices, self.vertices[1:]))

    def __len__(self) -> int:
        return len(self.vertices) - 1


def enumerate_simple_paths(
    graph: BackboneGraph, source: int, target: int, blocked: frozenset[int] = frozenset()
) -> list[Path]:
    """All simple paths from ``source`` to ``target`` in lexicographic order.

    ``blocked`` vertices may not appear in the interior of a path.
    """
    if source == target:
        raise ValueError("paths are defined between two distinct blocks")
    adj = graph.adjacency
    out: list[Path] = []
    stack = [source]
    on_path = {source}

    def dfs(node: int) -> None:
        for nxt in adj[node]:
            if nxt in on_path:
                continue
            if nxt == target:
                out.append(Path(tuple(stack) + (nxt,)))
                continue
            if nxt in blocked:
                continue
            stack.append(nxt)
            on_path.add(nxt)
            dfs(nxt)
            on_path.discard(nxt)
            stack.pop()

    dfs(source)
    return out


@dataclass(eq=False)
class Grid:
    """A feeder together with its block partition and backbone graph."""

    feeder: Feeder
    partition: BlockPartition
    backbone: BackboneGraph

    @classmethod
    def from_feeder(cls, feeder: Feeder) -> "Grid":
        part = partition_blocks(feeder)
        return cls(feeder, part, build_backbone(part, feeder))

    @property
    def n_blocks(self) -> int:
        return self.partition.n_blocks

    def block_of(self, bus: int) -> int:
        return self.partition.tau[bus]

    @cached_property
    def line_blocks(self) -> dict[str, tuple[int, int]]:
        tau = self.partition.tau
        return {ln.id: (tau[ln.from_bus], tau[ln.to_bus]) for ln in self.feeder.lines}

    @cached_property
    def tg_block(self) -> int | None:
        tg = self.feeder.tg
        return None if tg is None else self.partition.tau[tg.bus]

    @cached_property
    def bess_blocks(self) -> tuple[int, ...]:
        return tuple(sorted({self.partition.tau[b.bus] for b in self.feeder.batteries}))

    @cached_property
    def bs_blocks(self) -> tuple[int, ...]:
        tg = () if self.tg_block is None else (self.tg_block,)
        return tuple(sorted(set(self.bess_blocks) | set(tg)))

    @cached_property
    def esw_ids(self) -> tuple[str, ...]:
        return tuple(ln.id for ln in self.feeder.lines if ln.kind == "ESW")

    @cached_property
    def ssw_ids(self) -> tuple[str, ...]:
        return tuple(ln.id for ln in self.feeder.lines if ln.kind == "SSW")

    def ssw_edge_of_line(self, line_id: str) -> int:
        a, b = self.line_blocks[line_id]
        idx = self.backbone.edge_between(a, b)
        assert idx is not None
        return idx
