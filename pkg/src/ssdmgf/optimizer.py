"""Best-first branch and bound over switching actions, warm starts on the
synchronization family, and an exhaustive oracle for tiny instances."""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import pathlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .config import DEFAULT_PARAMS, SSDMGF, Params, RuleSet
from .context import Instance
from .engine import NO_ACTION, Action, Engine, State, build_plan
from .plan import RestorationPlan
from .scenario import Scenario
from .sync_structure import Mode, check_transition_safety
from .topology import Feeder, Grid

log = logging.getLogger(__name__)

STRATEGIES = ("WWS", "AZWS", "RWS", "CAWS", "OSWS")
BRUTE_LIMITS = {"blocks": 5, "steps": 6, "ssw": 2}


class InfeasibleError(RuntimeError):
    """No feasible plan exists under the engine's action space."""


def make_instance(feeder: Feeder | Grid | Instance, scenario: Scenario | None = None,
                  params: Params | None = None) -> Instance:
    if isinstance(feeder, Instance):
        return feeder
    grid = feeder if isinstance(feeder, Grid) else Grid.from_feeder(feeder)
    if scenario is None:
        raise ValueError("a scenario is required")
    return Instance(grid, scenario, params or DEFAULT_PARAMS)


# --------------------------------------------------------------------------- warm starts


@dataclass(eq=False)
class PartialAssignment:
    """Fixed values for part of the synchronization family; ``None`` = free."""

    strategy: str
    u_sync: np.ndarray | None = None  # [T, nBS, nBS]
    u_ssw: np.ndarray | None = None  # [T, nSSW] in feeder line order
    u_mode: np.ndarray | None = None  # [T, M]
    u_class: np.ndarray | None = None  # [T, C]
    note: str = ""

    FAMILIES = ("u_sync", "u_ssw", "u_mode", "u_class")

    def consistency(self, inst: Instance, rules: RuleSet = SSDMGF) -> list[str]:
        """Reasons this assignment cannot be part of a feasible plan (empty = consistent)."""
        T = inst.T
        cat = inst.catalogue
        n_bs = len(inst.bs_blocks)
        want = {
            "u_sync": (T, n_bs, n_bs),
            "u_ssw": (T, len(inst.ssw_lines)),
            "u_mode": (T, len(cat)),
            "u_class": (T, max(1, n_bs)),
        }
        reasons: list[str] = []
        for name in self.FAMILIES:
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.shape != want[name]:
                return [f"{name} has shape {arr.shape}, expected {want[name]}"]
            if not np.isin(arr, (0, 1)).all():
                reasons.append(f"{name} is not binary")
        if reasons:
            return reasons
        sync, ssw, um, uc = self.u_sync, self.u_ssw, self.u_mode, self.u_class
        if ssw is not None:
            if np.any(np.diff(ssw.astype(int), axis=0) < 0):
                reasons.append("u_ssw reopens a switch")
            if rules.ssw_lockout and np.any(ssw.astype(int) > inst.u_tg[:, None]):
                reasons.append("u_ssw closes a switch while the TG is unavailable")
        if sync is not None:
            s = sync.astype(int)
            if np.any(s != s.transpose(0, 2, 1)) or np.any(np.diagonal(s, axis1=1, axis2=2)):
                reasons.append("u_sync is not symmetric with a zero diagonal")
            if np.any(np.diff(s, axis=0) < 0):
                reasons.append("u_sync decreases")
            if rules.sync_safety:
                for t in range(1, T):
                    if not check_transition_safety(s[t - 1], s[t]).safe:
                        reasons.append(f"step {t}: unsafe merge of more than two islands")
                        break
        classes = np.arange(1, (uc.shape[1] if uc is not None else 0) + 1)
        for t in range(T):
            active = inst.active_bs(t)
            if uc is not None:
                if active and int(uc[t].sum()) != 1:
                    reasons.append(f"step {t}: u_class is not one-hot")
                    continue
                if not active and uc[t].any():
                    reasons.append(f"step {t}: class selected with no active BS block")
                    continue
            mode = None
            if um is not None:
                sel = np.flatnonzero(um[t])
                if len(sel) > 1 or (active and len(sel) == 0):
                    reasons.append(f"step {t}: u_mode is not one-hot")
                    continue
                if len(sel) == 1:
                    mode = cat.modes[int(sel[0])]
                    if set(mode.blocks) != set(active):
                        reasons.append(f"step {t}: mode {mode} does not match the TG state")
                        continue
                    if uc is not None and not uc[t, mode.klass - 1]:
                        reasons.append(f"step {t}: mode class disagrees with u_class")
                        continue
            if sync is not None:
                for i, j in itertools.combinations(range(n_bs), 2):
                    a, b = inst.bs_blocks[i], inst.bs_blocks[j]
                    if (a not in active or b not in active) and sync[t, i, j]:
                        reasons.append(f"step {t}: u_sync set on an inactive BS block")
                        break
                    if mode is not None and a in active and b in active and bool(sync[t, i, j]) != mode.same_part(a, b):
                        reasons.append(f"step {t}: u_sync disagrees with mode {mode}")
                        break
            if ssw is not None and uc is not None and active:
                s_t = inst.n_bess_blocks + int(inst.u_tg[t]) - int(ssw[t].sum())
                if int((classes * uc[t]).sum()) != s_t:
                    reasons.append(f"step {t}: class {int((classes * uc[t]).sum())} but {s_t} islands implied by u_ssw")
        return reasons

    # ------------------------------------------------------------ persistence
    def to_dict(self) -> dict:
        out = {"strategy": self.strategy, "note": self.note}
        for name in self.FAMILIES:
            arr = getattr(self, name)
            out[name] = None if arr is None else arr.astype(int).tolist()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PartialAssignment":
        kw = {name: (None if data.get(name) is None else np.array(data[name], dtype=np.int8)) for name in cls.FAMILIES}
        return cls(data.get("strategy", "CUSTOM"), note=data.get("note", ""), **kw)

    def save(self, path: str | pathlib.Path) -> None:
        pathlib.Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | pathlib.Path) -> "PartialAssignment":
        return cls.from_dict(json.loads(pathlib.Path(path).read_text(encoding="utf-8")))


def zero_warm_start(inst: Instance) -> PartialAssignment:
    """No SSW closures and no synchronization: every active BS block is its own island."""
    T, cat = inst.T, inst.catalogue
    n_bs = len(inst.bs_blocks)
    u_mode = np.zeros((T, len(cat)), dtype=np.int8)
    u_class = np.zeros((T, max(1, n_bs)), dtype=np.int8)
    for t in range(T):
        active = inst.active_bs(t)
        if not active:
            continue
        mode = Mode.from_parts([[k] for k in active])
        u_mode[t, cat.index_of(mode)] = 1
        u_class[t, mode.klass - 1] = 1
    return PartialAssignment(
        "AZWS",
        u_sync=np.zeros((T, n_bs, n_bs), dtype=np.int8),
        u_ssw=np.zeros((T, len(inst.ssw_lines)), dtype=np.int8),
        u_mode=u_mode,
        u_class=u_class,
    )


def random_warm_start(inst: Instance, rng: np.random.Generator) -> PartialAssignment:
    T, n_bs = inst.T, len(inst.bs_blocks)
    draw = lambda *shape: rng.integers(0, 2, size=shape).astype(np.int8)  # noqa: E731
    return PartialAssignment(
        "RWS",
        u_sync=draw(T, n_bs, n_bs),
        u_ssw=draw(T, len(inst.ssw_lines)),
        u_mode=draw(T, len(inst.catalogue)),
        u_class=draw(T, max(1, n_bs)),
    )


def warm_from_plan(inst: Instance, plan: RestorationPlan, strategy: str = "OSWS") -> PartialAssignment:
    return PartialAssignment(
        strategy,
        u_sync=plan.u_sync.astype(np.int8).copy(),
        u_ssw=plan.u_line[:, list(inst.ssw_lines)].astype(np.int8).copy(),
        u_mode=plan.u_mode.astype(np.int8).copy(),
        u_class=plan.u_class.astype(np.int8).copy(),
    )


def constraint_aware_warm_start(inst: Instance, provider=None, logits=None) -> PartialAssignment:
    from .feasibility import HeuristicLogitProvider, Resolver, extract_warm_start

    if logits is None:
        logits = (provider or HeuristicLogitProvider())(inst.grid, inst.scenario)
    z_root, z_sync = logits
    resolver = Resolver.from_grid(inst.grid, inst.params.root_threshold)
    outputs, _ = resolver.sequence(z_root, z_sync, inst.u_tg)
    return extract_warm_start(outputs, inst.catalogue, inst.grid, inst.u_tg)


def make_warm_start(strategy: str, inst: Instance, rules: RuleSet = SSDMGF, seed: int = 42,
                    oracle_plan: RestorationPlan | None = None, logits=None) -> PartialAssignment | None:
    strategy = strategy.upper()
    if strategy == "WWS":
        return None
    if strategy == "AZWS":
        return zero_warm_start(inst)
    if strategy == "RWS":
        return random_warm_start(inst, np.random.default_rng(seed))
    if strategy == "CAWS":
        return constraint_aware_warm_start(inst, logits=logits)
    if strategy == "OSWS":
        if oracle_plan is None:
            oracle_plan, _ = solve(inst, rules=rules)
        return warm_from_plan(inst, oracle_plan)
    raise ValueError(f"unknown warm-start strategy {strategy!r}; choose from {STRATEGIES}")


# --------------------------------------------------------------------------- search


@dataclass
class SolveStats:
    strategy: str = "WWS"
    rules: str = "SSDMGF"
    nodes: int = 0
    first_feasible_nodes: int | None = None
    first_feasible_time: float | None = None
    first_feasible_objective: float | None = None
    best_objective: float = 0.0
    elapsed: float = 0.0
    optimal: bool = False
    fallback: bool = False
    warm_start_accepted: bool | None = None
    warm_start_completed: bool | None = None
    warm_start_reasons: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class _Node:
    state: State
    g: float
    parent: "_Node | None"
    action: Action

    def actions(self) -> list[Action]:
        out = []
        node = self
        while node.parent is not None:
            out.append(node.action)
            node = node.parent
        return out[::-1]


class _Search:
    def __init__(self, engine: Engine, stats: SolveStats, max_nodes: int, max_seconds: float):
        self.eng = engine
        self.stats = stats
        self.max_nodes = max_nodes
        self.deadline = time.perf_counter() + max_seconds
        self.start = time.perf_counter()
        self.best: _Node | None = None
        self.best_value = -np.inf

    def out_of_budget(self) -> bool:
        return self.stats.nodes >= self.max_nodes or time.perf_counter() > self.deadline

    def expand(self, node: _Node, action: Action) -> _Node | None:
        self.stats.nodes += 1
        res = self.eng.step(node.state, action)
        if res is None:
            return None
        st, row = res
        child = _Node(st, node.g + row.value, node, action)
        if st.t == self.eng.T:
            self.offer(child)
        return child

    def offer(self, leaf: _Node) -> None:
        s = self.stats
        if s.first_feasible_nodes is None:
            s.first_feasible_nodes = s.nodes
            s.first_feasible_time = time.perf_counter() - self.start
            s.first_feasible_objective = leaf.g
        if leaf.g > self.best_value + 1e-12:
            self.best, self.best_value = leaf, leaf.g

    # ------------------------------------------------------------ warm dive
    def dive(self, schedule: np.ndarray | None, cap: int) -> bool:
        """Depth-first completion following a closing schedule for SSW lines.

        Each step closes every scheduled SSW that is legal, never an
        unscheduled one, and energizes as much as the physics allows while
        the result can still be held to the horizon. Backtracks on dead
        ends; gives up after ``cap`` transitions.
        """
        eng = self.eng
        ssw_lines = list(eng.inst.ssw_lines)
        used = [0]

        def wanted(t: int) -> set[int]:
            if schedule is None or not ssw_lines:
                return set()
            return {ssw_lines[j] for j in np.flatnonzero(schedule[t])}

        def rec(node: _Node) -> bool:
            t = node.state.t
            if t == eng.T:
                return True
            due = wanted(t) - node.state.closed
            acts = [a for a in eng.actions(node.state) if set(a.ssw) <= due]
            acts.sort(key=lambda a: (-len(a.ssw), -len(a.esw), a.key()))
            for a in acts:
                if used[0] >= cap or self.out_of_budget():
                    return False
                used[0] += 1
                child = self.expand(node, a)
                if child is None or not eng.holds(child.state):
                    continue
                if rec(child):
                    return True
            return False

        root = _Node(eng.initial_state(), 0.0, None, NO_ACTION)
        return rec(root)

    # ------------------------------------------------------------ best-first
    def best_first(self) -> bool:
        """Returns True when the search tree was exhausted (optimality proved)."""
        eng = self.eng
        root = _Node(eng.initial_state(), 0.0, None, NO_ACTION)
        seq = itertools.count()
        heap: list = [(-eng.bound(root.state), 0, next(seq), True, root, None)]
        while heap:
            neg_key, _, _, evaluated, node, action = heap[0]
            if -neg_key <= self.best_value + 1e-9:
                return True
            if self.out_of_budget():
                return False
            heapq.heappop(heap)
            if not evaluated:
                child = self.expand(node, action)
                if child is None or child.state.t == eng.T:
                    continue
                f = child.g + eng.bound(child.state)
                if f > self.best_value + 1e-9:
                    heapq.heappush(heap, (-f, action.size, next(seq), True, child, None))
                continue
            for a in eng.actions(node.state):
                heapq.heappush(heap, (neg_key, a.size, next(seq), False, node, a))
        return True


def solve(feeder, scenario: Scenario | None = None, rules: RuleSet = SSDMGF,
          warm: PartialAssignment | None = None, max_nodes: int | None = None,
          max_seconds: float | None = None, params: Params | None = None) -> tuple[RestorationPlan, SolveStats]:
    """Maximize weighted restored energy; returns the best plan and search statistics."""
    inst = make_instance(feeder, scenario, params)
    prm = inst.params
    eng = Engine(inst, rules)
    stats = SolveStats(strategy="WWS" if warm is None else warm.strategy, rules=rules.name)
    search = _Search(eng, stats, max_nodes or prm.max_nodes, prm.max_seconds if max_seconds is None else max_seconds)

    if warm is not None:
        reasons = warm.consistency(inst, rules)
        stats.warm_start_accepted = not reasons
        stats.warm_start_reasons = reasons
        if reasons:
            log.info("warm start %s rejected: %s", warm.strategy, reasons[0])
        else:
            stats.warm_start_completed = search.dive(warm.u_ssw, cap=max(50, 20 * inst.T))

    stats.optimal = search.best_first()
    if search.best is None:
        rows = _fallback(eng)
        if rows is None:
            raise InfeasibleError("no feasible restoration plan was found within the budget")
        stats.fallback = True
        stats.optimal = False
        value = float(sum(r.value for r in rows))
        stats.first_feasible_nodes = stats.nodes
        stats.first_feasible_time = time.perf_counter() - search.start
        stats.first_feasible_objective = value
    else:
        rows = eng.rollout(search.best.actions())
    stats.elapsed = time.perf_counter() - search.start
    plan = build_plan(inst, rows, _meta(inst, rules, stats.strategy))
    stats.best_objective = float(sum(r.value for r in rows))
    plan.meta["objective"] = stats.best_objective
    return plan, stats


def _fallback(eng: Engine):
    try:
        return eng.rollout([NO_ACTION] * eng.T)
    except ValueError:
        return None


def _meta(inst: Instance, rules: RuleSet, strategy: str) -> dict:
    return {
        "rules": rules.name,
        "strategy": strategy,
        "scenario": inst.scenario.to_dict(),
        "feeder_digest": inst.digest(),
        "params": inst.params.to_dict(),
    }


def brute_force_small(feeder, scenario: Scenario | None = None, rules: RuleSet = SSDMGF,
                      params: Params | None = None) -> RestorationPlan:
    """Exhaustive enumeration of every action sequence; tiny instances only."""
    inst = make_instance(feeder, scenario, params)
    if (inst.K > BRUTE_LIMITS["blocks"] or inst.T > BRUTE_LIMITS["steps"]
            or len(inst.ssw_lines) > BRUTE_LIMITS["ssw"]):
        raise ValueError(
            f"instance too large for exhaustive search ({inst.K} blocks, {inst.T} steps, "
            f"{len(inst.ssw_lines)} SSWs; limits {BRUTE_LIMITS})"
        )
    eng = Engine(inst, rules)
    best: list = [-np.inf, None]

    def rec(st: State, value: float, path: list[Action]) -> None:
        if st.t == inst.T:
            if value > best[0] + 1e-12:
                best[0], best[1] = value, list(path)
            return
        for a in eng.actions(st):
            res = eng.step(st, a)
            if res is None:
                continue
            nxt, row = res
            path.append(a)
            rec(nxt, value + row.value, path)
            path.pop()

    rec(eng.initial_state(), 0.0, [])
    if best[1] is None:
        raise InfeasibleError("no feasible restoration plan exists")
    rows = eng.rollout(best[1])
    plan = build_plan(inst, rows, _meta(inst, rules, "oracle"))
    plan.meta["objective"] = float(sum(r.value for r in rows))
    return plan


def apply_warm_start(engine: Engine, warm: PartialAssignment, rules: RuleSet | None = None):
    """Check ``warm`` and, if consistent, dive to a seeded incumbent.

    Returns ``(accepted, reasons, actions)`` where ``actions`` completes the
    warm schedule (None when the dive fails or the warm start is rejected).
    """
    rules = rules or engine.rules
    reasons = warm.consistency(engine.inst, rules)
    if reasons:
        return False, reasons, None
    stats = SolveStats(strategy=warm.strategy)
    search = _Search(engine, stats, max_nodes=10**9, max_seconds=60.0)
    ok = search.dive(warm.u_ssw, cap=max(50, 20 * engine.T))
    return True, [], (search.best.actions() if ok and search.best is not None else None)
