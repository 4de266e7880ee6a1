"""Command-line entry point: ``ssdmgf <subcommand> ...``.

Each subcommand is a thin wrapper over one library call. Exit codes are 0 on
success, 2 when a validated plan has violations and 3 for infeasible
instances or unreadable inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys
from typing import Sequence

from . import experiments, lpexport
from .config import Params, RuleSet, load_params
from .feasibility import FeasibleOutputs, HeuristicLogitProvider, Resolver, extract_warm_start, load_logits
from .optimizer import STRATEGIES, InfeasibleError, PartialAssignment, make_instance, make_warm_start, solve
from .plan import PlanShapeError, RestorationPlan, validate_plan
from .scenario import GridConfig, Scenario, build_features, generate_grid, split_dataset
from .sync_structure import ModeCatalogue
from .topology import Feeder, FeederFormatError, FeederValidationError, Grid, load_feeder, replica_feeder

EXIT_OK, EXIT_VIOLATIONS, EXIT_FAILURE = 0, 2, 3

log = logging.getLogger("ssdmgf")


class CliError(Exception):
    """A user-facing failure that maps to exit code 3."""


# --------------------------------------------------------------------------- helpers


def _feeder(args) -> Feeder:
    return replica_feeder() if args.feeder is None else load_feeder(args.feeder)


def _params(args) -> Params:
    return load_params(args.params, seed=args.seed)


def _scenario(args) -> Scenario:
    if args.scenario is None:
        raise CliError("--scenario is required")
    return Scenario.load(args.scenario)


def _write_json(path: str | pathlib.Path, data) -> None:
    path = pathlib.Path(path)
    if path.parent != pathlib.Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, default=str) + "\n", encoding="utf-8")


def _echo(args, params: Params, **extra) -> dict:
    """Effective configuration embedded into every output manifest."""
    return {
        "feeder": args.feeder or "replica",
        "seed": args.seed,
        "params_file": args.params,
        "params": params.to_dict(),
        **extra,
    }


def parse_budget(text: str | None) -> tuple[int | None, float | None]:
    """``"500"`` is a node budget, ``"30s"`` a wall-clock budget in seconds."""
    if text is None:
        return None, None
    text = text.strip().lower()
    try:
        if text.endswith("s"):
            sec = float(text[:-1])
            if sec <= 0:
                raise ValueError
            return None, sec
        nodes = int(text)
        if nodes <= 0:
            raise ValueError
        return nodes, None
    except ValueError:
        raise CliError(f"budget must be a positive node count or seconds like '30s', got {text!r}") from None


def _warm(spec: str, inst, rules: RuleSet, seed: int) -> PartialAssignment | None:
    key = spec.lower()
    aliases = {"none": "WWS", "zero": "AZWS", "random": "RWS", "oracle": "OSWS", "caws": "CAWS"}
    if key in aliases:
        return make_warm_start(aliases[key], inst, rules, seed=seed)
    if spec.upper() in STRATEGIES:
        return make_warm_start(spec.upper(), inst, rules, seed=seed)
    path = pathlib.Path(spec)
    if not path.exists():
        raise CliError(f"--warm expects none|zero|random|oracle|caws or a JSON file, got {spec!r}")
    return PartialAssignment.load(path)


# --------------------------------------------------------------------------- subcommands


def cmd_ingest(args) -> int:
    feeder = _feeder(args)
    grid = Grid.from_feeder(feeder)
    summary = {
        "name": feeder.name,
        "digest": feeder.digest(),
        "buses": len(feeder.buses),
        "lines": len(feeder.lines),
        "esw": list(grid.esw_ids),
        "ssw": list(grid.ssw_ids),
        "blocks": [sorted(int(b) for b in members) for members in grid.partition.blocks],
        "tg_block": grid.tg_block,
        "bess_blocks": list(grid.bess_blocks),
        "backbone": [list(e.pair) for e in grid.backbone.edges],
        "seasons": list(feeder.seasons),
    }
    if args.out:
        _write_json(args.out, summary)
    else:
        print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_modes(args) -> int:
    flags = {"0": (0,), "1": (1,), "both": (0, 1)}[args.tg]
    catalogue = ModeCatalogue.build(Grid.from_feeder(_feeder(args)), flags)
    rows = catalogue.to_json()
    if args.out:
        _write_json(args.out, rows)
    hist = catalogue.class_histogram()
    print(f"{len(rows)} modes; by class: " + ", ".join(f"{c}:{hist[c]}" for c in sorted(hist, reverse=True)))
    return EXIT_OK


def cmd_scenarios(args) -> int:
    feeder = _feeder(args)
    grid_cfg = GridConfig()
    if args.config:
        grid_cfg = GridConfig.from_dict(json.loads(pathlib.Path(args.config).read_text(encoding="utf-8")))
    scenarios = generate_grid(Grid.from_feeder(feeder), grid_cfg)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in scenarios:
        s.save(out / f"{s.id}.json")
    split = split_dataset(scenarios, seed=args.seed)
    manifest = {
        "count": len(scenarios),
        "feeder_digest": feeder.digest(),
        "grid": {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(grid_cfg).items()},
        "split": split,
        "config": _echo(args, _params(args)),
    }
    _write_json(out / "manifest.json", manifest)
    print(f"{len(scenarios)} scenarios written to {out}")
    return EXIT_OK


def cmd_features(args) -> int:
    tensor = build_features(_scenario(args), _feeder(args))
    pathlib.Path(args.out).write_bytes(tensor.to_bytes())
    print(f"features {tensor.x.shape} with {tensor.e.shape[0]} edge entries written to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    params = _params(args)
    rules = RuleSet.named(args.rules)
    inst = make_instance(_feeder(args), _scenario(args), params)
    max_nodes, max_seconds = parse_budget(args.budget)
    warm = _warm(args.warm, inst, rules, args.seed)
    plan, stats = solve(inst, rules=rules, warm=warm, max_nodes=max_nodes, max_seconds=max_seconds)
    config = _echo(args, params, rules=rules.name, warm=args.warm, budget=args.budget)
    plan.save(args.out, {"config": config})
    if args.stats:
        _write_json(args.stats, {**stats.to_dict(), "config": config})
    print(f"objective {stats.best_objective:.6f} after {stats.nodes} nodes ({'optimal' if stats.optimal else 'budget hit'})")
    return EXIT_OK


def cmd_validate(args) -> int:
    rules = RuleSet.named(args.rules)
    plan = RestorationPlan.load(args.plan)
    report = validate_plan(_feeder(args), _scenario(args), plan, rules, _params(args))
    if args.out:
        pathlib.Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    if report:
        counts = ", ".join(f"{k}:{v}" for k, v in report.by_constraint().items())
        print(f"{len(report)} violations ({counts})")
        return EXIT_VIOLATIONS
    print("plan is feasible")
    return EXIT_OK


def cmd_resolve(args) -> int:
    grid = Grid.from_feeder(_feeder(args))
    scenario = None if args.scenario is None else Scenario.load(args.scenario)
    if args.logits == "heuristic":
        if scenario is None:
            raise CliError("heuristic logits need --scenario")
        z_root, z_sync = HeuristicLogitProvider()(grid, scenario)
    else:
        z_root, z_sync = load_logits(args.logits)
    u_tg = None if scenario is None else scenario.u_tg()
    outputs, _ = Resolver.from_grid(grid, args.lam).sequence(z_root, z_sync, u_tg)
    extra = {"lambda": args.lam, "config": _echo(args, _params(args))}
    if scenario is not None:
        extra["scenario"] = scenario.to_dict()
    outputs.save(args.out, extra)
    print(f"resolved {outputs.y_root.shape[0]} steps to {args.out}")
    return EXIT_OK


def cmd_warmstart(args) -> int:
    params = _params(args)
    feeder = _feeder(args)
    if args.resolved:
        data = json.loads(pathlib.Path(args.resolved).read_text(encoding="utf-8"))
        if args.scenario is not None:
            scenario = Scenario.load(args.scenario)
        elif "scenario" in data:
            scenario = Scenario.from_dict(data["scenario"])
        else:
            raise CliError("the resolved file carries no scenario; pass --scenario")
        inst = make_instance(feeder, scenario, params)
        warm = extract_warm_start(FeasibleOutputs.from_dict(data), inst.catalogue, inst.grid, inst.u_tg)
    else:
        inst = make_instance(feeder, _scenario(args), params)
        warm = make_warm_start(args.strategy, inst, RuleSet.named(args.rules), seed=args.seed)
        if warm is None:
            raise CliError("WWS has no warm start to write")
    warm.save(args.out)
    reasons = warm.consistency(inst, RuleSet.named(args.rules))
    print(f"{warm.strategy} warm start {'consistent' if not reasons else 'inconsistent: ' + reasons[0]}")
    return EXIT_OK


def cmd_batch(args) -> int:
    params = _params(args)
    max_nodes, max_seconds = parse_budget(args.budget)
    strategies = [s.strip().upper() for s in args.strategies.split(",") if s.strip()]
    report = experiments.run_batch(
        _feeder(args), args.scenarios, strategies, max_nodes=max_nodes, max_seconds=max_seconds,
        rules=RuleSet.named(args.rules), params=params, seed=args.seed, out_dir=args.out, workers=args.workers,
    )
    report.config["cli"] = _echo(args, params, budget=args.budget)
    report.save(pathlib.Path(args.out) / "report.json")
    failed = sum(r.status != "ok" for r in report.rows)
    print(f"{len(report.rows)} rows, {failed} failed; results in {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = experiments.ExperimentReport.load(args.batch)
    written = experiments.report_render(report, args.out)
    _write_json(pathlib.Path(args.out) / "aggregates.json", report.aggregates())
    print("wrote " + ", ".join(str(p) for p in written.values()))
    return EXIT_OK


def cmd_export_model(args) -> int:
    rules = RuleSet.named(args.rules)
    model = lpexport.export_model(_feeder(args), _scenario(args), rules, _params(args))
    model.write(args.out)
    print(f"{model.n_vars} variables ({model.n_binary} binary), {len(model.rows)} rows written to {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--feeder", help="feeder document (default: bundled 123-bus replica)")
    common.add_argument("--params", help="JSON file overriding built-in parameters")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ssdmgf", description="Multi-microgrid restoration toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    def rules(p):
        p.add_argument("--rules", default="ssdmgf", choices=["ssdmgf", "ndmgf", "rr"])

    p = add("ingest", cmd_ingest, "parse a feeder and summarize its blocks")
    p.add_argument("--out")

    p = add("modes", cmd_modes, "enumerate synchronization modes")
    p.add_argument("--tg", default="both", choices=["0", "1", "both"])
    p.add_argument("--out")

    p = add("scenarios", cmd_scenarios, "generate the scenario grid")
    p.add_argument("--config", help="grid options as JSON")
    p.add_argument("--out", required=True)

    p = add("features", cmd_features, "build the feature tensor of a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)

    p = add("solve", cmd_solve, "optimize a restoration plan")
    p.add_argument("--scenario", required=True)
    rules(p)
    p.add_argument("--warm", default="none", help="none|zero|random|oracle|caws or a warm-start JSON")
    p.add_argument("--budget", help="node count, or seconds with an 's' suffix")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")

    p = add("validate", cmd_validate, "check a plan against every constraint")
    p.add_argument("--scenario", required=True)
    p.add_argument("--plan", required=True)
    rules(p)
    p.add_argument("--out", help="violation report JSON")

    p = add("resolve", cmd_resolve, "turn logits into feasible root and sync decisions")
    p.add_argument("--logits", required=True, help="logit file, or 'heuristic'")
    p.add_argument("--scenario")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = add("warmstart", cmd_warmstart, "write a warm-start assignment")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--resolved")
    src.add_argument("--strategy", choices=[s for s in STRATEGIES if s != "WWS"])
    p.add_argument("--scenario")
    rules(p)
    p.add_argument("--out", required=True)

    p = add("batch", cmd_batch, "solve a scenario directory with several strategies")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    rules(p)
    p.add_argument("--budget")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)

    p = add("report", cmd_report, "render plot-ready tables from a batch")
    p.add_argument("--batch", required=True, help="report.json written by batch")
    p.add_argument("--out", required=True)

    p = add("export-model", cmd_export_model, "write the MILP in LP format")
    p.add_argument("--scenario", required=True)
    rules(p)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
    except (CliError, FeederFormatError, FeederValidationError, PlanShapeError, FileNotFoundError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
