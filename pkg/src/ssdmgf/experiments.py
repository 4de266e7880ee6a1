"""Batch experiments over a scenario directory and plot-ready report tables."""

from __future__ import annotations

import csv
import json
import math
import os
import pathlib
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .config import SSDMGF, Params, RuleSet
from .optimizer import STRATEGIES, InfeasibleError, make_instance, make_warm_start, solve
from .plan import RestorationPlan, validate_plan
from .scenario import Scenario
from .topology import Feeder, Grid

ROW_COLUMNS = (
    "scenario", "strategy", "status", "objective", "first_feasible_objective", "first_feasible_time",
    "first_feasible_nodes", "nodes", "elapsed", "optimal", "warm_start_accepted", "violations", "plan", "error",
)


def worker_count(requested: int | None = None) -> int:
    """Pool size: the request (or CPU count), capped by SSDMGF_THREADS when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("SSDMGF_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise ValueError(f"SSDMGF_THREADS must be a positive integer, got {cap!r}") from exc
    return max(1, n)


@dataclass
class BatchRow:
    scenario: str
    strategy: str
    status: str = "ok"  # ok | infeasible | error
    objective: float | None = None
    first_feasible_objective: float | None = None
    first_feasible_time: float | None = None
    first_feasible_nodes: int | None = None
    nodes: int = 0
    elapsed: float = 0.0
    optimal: bool = False
    warm_start_accepted: bool | None = None
    violations: int = 0
    plan: str = ""
    error: str = ""


def _geomean(xs: Sequence[float]) -> float | None:
    xs = [x for x in xs if x is not None and x > 0 and math.isfinite(x)]
    return math.exp(sum(math.log(x) for x in xs) / len(xs)) if xs else None


def _gap(row: BatchRow) -> float | None:
    if row.objective is None or row.first_feasible_objective is None:
        return None
    if row.objective <= 0:
        return 0.0
    return (row.objective - row.first_feasible_objective) / row.objective


@dataclass
class ExperimentReport:
    rows: list[BatchRow] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def by_strategy(self, strategy: str) -> dict[str, BatchRow]:
        return {r.scenario: r for r in self.rows if r.strategy == strategy}

    def aggregates(self) -> dict[str, dict]:
        """Per strategy: speedups of first-feasible time and nodes against WWS, gap improvement."""
        base = self.by_strategy("WWS")
        out = {}
        for strategy in sorted({r.strategy for r in self.rows}, key=lambda s: STRATEGIES.index(s)):
            mine = self.by_strategy(strategy)
            t_ratio, n_ratio, gain = [], [], []
            for sid, row in mine.items():
                ref = base.get(sid)
                if ref is None or row.status != "ok" or ref.status != "ok":
                    continue
                if row.first_feasible_time and ref.first_feasible_time:
                    t_ratio.append(ref.first_feasible_time / row.first_feasible_time)
                if row.first_feasible_nodes and ref.first_feasible_nodes:
                    n_ratio.append(ref.first_feasible_nodes / row.first_feasible_nodes)
                g0, g1 = _gap(ref), _gap(row)
                if g0 is not None and g1 is not None:
                    gain.append(g0 - g1)
            accepted = [r.warm_start_accepted for r in mine.values() if r.warm_start_accepted is not None]
            out[strategy] = {
                "rows": len(mine),
                "failures": sum(r.status != "ok" for r in mine.values()),
                "time_speedup_geomean": _geomean(t_ratio),
                "time_speedup_median": statistics.median(t_ratio) if t_ratio else None,
                "node_speedup_geomean": _geomean(n_ratio),
                "node_speedup_median": statistics.median(n_ratio) if n_ratio else None,
                "gap_improvement_mean": statistics.fmean(gain) if gain else None,
                "gap_improvement_median": statistics.median(gain) if gain else None,
                "first_feasible_nodes_geomean": _geomean([r.first_feasible_nodes for r in mine.values()]),
                "warm_start_accept_rate": (sum(accepted) / len(accepted)) if accepted else None,
            }
        return out

    # ------------------------------------------------------------ I/O
    def write_csv(self, path: str | pathlib.Path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=ROW_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow(asdict(r))
        return path

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": [asdict(r) for r in self.rows], "aggregates": self.aggregates()}

    def save(self, path: str | pathlib.Path) -> pathlib.Path:
        path = pathlib.Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, default=str) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | pathlib.Path) -> "ExperimentReport":
        data = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
        return cls([BatchRow(**r) for r in data["rows"]], data.get("config", {}))


def load_scenarios(directory: str | pathlib.Path) -> list[Scenario]:
    """Every scenario JSON in ``directory`` (the manifest is skipped), sorted by id."""
    src = pathlib.Path(directory)
    if not src.is_dir():
        raise FileNotFoundError(f"scenario directory {src} does not exist")
    out = [Scenario.load(p) for p in sorted(src.glob("*.json")) if p.name != "manifest.json"]
    return sorted(out, key=lambda s: s.id)


def _run_scenario(feeder: Feeder, scenario: Scenario, strategies: Sequence[str], max_nodes: int | None,
                  max_seconds: float | None, rules: RuleSet, params: Params | None, seed: int,
                  plan_dir: str | None) -> list[BatchRow]:
    rows = []
    try:
        inst = make_instance(Grid.from_feeder(feeder), scenario, params)
    except Exception as exc:  # a broken scenario fails all of its rows
        return [BatchRow(scenario.id, s, status="error", error=str(exc)) for s in strategies]
    # OSWS reuses the WWS optimum, so WWS runs first when both are requested
    order = sorted(strategies, key=lambda s: (s != "WWS", STRATEGIES.index(s)))
    reference: RestorationPlan | None = None
    for strategy in order:
        row = BatchRow(scenario.id, strategy)
        try:
            warm = make_warm_start(strategy, inst, rules, seed=seed, oracle_plan=reference)
            plan, stats = solve(inst, rules=rules, warm=warm, max_nodes=max_nodes, max_seconds=max_seconds)
            if strategy == "WWS":
                reference = plan
            row.objective = stats.best_objective
            row.first_feasible_objective = stats.first_feasible_objective
            row.first_feasible_time = stats.first_feasible_time
            row.first_feasible_nodes = stats.first_feasible_nodes
            row.nodes = stats.nodes
            row.elapsed = stats.elapsed
            row.optimal = stats.optimal
            row.warm_start_accepted = None if warm is None else stats.warm_start_accepted
            row.violations = len(validate_plan(inst, None, plan, rules))
            if plan_dir is not None:
                target = pathlib.Path(plan_dir) / f"{scenario.id}--{strategy}.csv"
                plan.save(target, {"strategy": strategy, "stats": stats.to_dict()})
                row.plan = str(target)
        except InfeasibleError as exc:
            row.status, row.error = "infeasible", str(exc)
        except Exception as exc:  # recorded; the batch carries on
            row.status, row.error = "error", f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return sorted(rows, key=lambda r: STRATEGIES.index(r.strategy))


def run_batch(feeder: Feeder, scenarios: str | pathlib.Path | Sequence[Scenario],
              strategies: Sequence[str] = STRATEGIES, max_nodes: int | None = None,
              max_seconds: float | None = None, rules: RuleSet = SSDMGF, params: Params | None = None,
              seed: int = 42, out_dir: str | pathlib.Path | None = None,
              workers: int | None = None) -> ExperimentReport:
    """Solve every (scenario, strategy) pair under the same budget.

    With ``out_dir`` each row's plan goes to its own file under ``plans/`` and
    the rows are written to ``batch.csv`` plus ``report.json``.
    """
    strategies = [s.upper() for s in strategies]
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ValueError(f"unknown strategies {unknown}; choose from {STRATEGIES}")
    if isinstance(scenarios, (str, pathlib.Path)):
        scenarios = load_scenarios(scenarios)
    plan_dir = None
    if out_dir is not None:
        plan_dir = pathlib.Path(out_dir) / "plans"
        plan_dir.mkdir(parents=True, exist_ok=True)
    n = min(worker_count(workers), max(1, len(scenarios)))
    args = [(feeder, s, strategies, max_nodes, max_seconds, rules, params, seed,
             None if plan_dir is None else str(plan_dir)) for s in scenarios]
    if n == 1:
        results = [_run_scenario(*a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_run_scenario, *zip(*args)))
    report = ExperimentReport(
        rows=[r for rows in results for r in rows],
        config={
            "feeder": feeder.name,
            "feeder_digest": feeder.digest(),
            "strategies": strategies,
            "max_nodes": max_nodes,
            "max_seconds": max_seconds,
            "rules": rules.name,
            "seed": seed,
            "workers": n,
            "params": (params or Params()).to_dict(),
        },
    )
    if out_dir is not None:
        report.write_csv(pathlib.Path(out_dir) / "batch.csv")
        report.save(pathlib.Path(out_dir) / "report.json")
    return report


# --------------------------------------------------------------------------- rendering


def _plan_tables(sid: str, strategy: str, plan: RestorationPlan):
    load, klass, env = [], [], []
    for t in range(plan.T):
        cl = float(plan.p_cl[t].sum())
        nl = float(plan.p_nl[t].sum())
        load.append([sid, strategy, t, cl, nl, cl + nl])
        modes = np.flatnonzero(plan.u_mode[t])
        klass.append([sid, strategy, t, int(plan.s[t]), int(modes[0]) if len(modes) else -1])
        on = plan.u_bk[t] > 0
        if on.any():
            f = plan.f_block[t][on]
            env.append([sid, strategy, t, "frequency", float(f.min()), float(f.max())])
        if plan.soc.shape[1]:
            env.append([sid, strategy, t, "soc", float(plan.soc[t].min()), float(plan.soc[t].max())])
        live = plan.u_b[t] > 0
        v = plan.v[t][live]
        v = v[v > 0]
        if v.size:
            env.append([sid, strategy, t, "voltage_sq", float(v.min()), float(v.max())])
    return load, klass, env


def report_render(report: ExperimentReport, out_dir: str | pathlib.Path) -> dict[str, pathlib.Path]:
    """Long-format CSV tables for restored load, class/mode trajectories and envelopes.

    Rows without a saved plan are skipped unless they claim one that is gone,
    which raises FileNotFoundError.
    """
    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = {
        "restored_load": (["scenario", "strategy", "t", "cl", "nl", "total"], []),
        "class_mode": (["scenario", "strategy", "t", "class", "mode"], []),
        "envelopes": (["scenario", "strategy", "t", "quantity", "min", "max"], []),
    }
    for row in report.rows:
        if row.status != "ok" or not row.plan:
            continue
        path = pathlib.Path(row.plan)
        if not path.exists():
            raise FileNotFoundError(f"plan for {row.scenario}/{row.strategy} is missing: {path}")
        load, klass, env = _plan_tables(row.scenario, row.strategy, RestorationPlan.load(path))
        tables["restored_load"][1].extend(load)
        tables["class_mode"][1].extend(klass)
        tables["envelopes"][1].extend(env)
    written = {}
    for name, (header, rows) in tables.items():
        target = out / f"{name}.csv"
        with open(target, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        written[name] = target
    return written
