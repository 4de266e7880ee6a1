"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line summary with ``record_property("acceptance", ...)``;
the conftest hook prints a PASS/FAIL line per criterion after the run.
"""

import math
import time

import numpy as np
import pytest

from ssdmgf.cli import main
from ssdmgf.config import NDMGF, SSDMGF
from ssdmgf.feasibility import Resolver, metrics, resolve_sequence, sync_matrices
from ssdmgf.optimizer import (
    brute_force_small,
    constraint_aware_warm_start,
    make_instance,
    random_warm_start,
    solve,
    warm_from_plan,
    zero_warm_start,
)
from ssdmgf.plan import clpu_demand, radiality_terms, validate_plan
from ssdmgf.powerflow import FeederArrays, bus_injections, nodal_balance_residuals, solve_tree_flow
from ssdmgf.scenario import GridConfig, generate_grid, split_dataset
from ssdmgf.sync_structure import ModeCatalogue, Mode, check_transition_safety
from ssdmgf.topology import Grid, replica_feeder
from ssdmgf.toys import toy_suite, triple_merge_instance

REFERENCE_MODES = [
    [[0], [2], [5], [8]],
    [[2], [5], [8]], [[0], [2], [5, 8]], [[0], [2, 8], [5]], [[0, 2], [5], [8]], [[0, 5], [2], [8]],
    [[2], [5, 8]], [[2, 8], [5]], [[0], [2, 5, 8]], [[0, 2], [5, 8]], [[0, 2, 8], [5]], [[0, 5], [2, 8]],
    [[0, 5, 8], [2]],
    [[2, 5, 8]], [[0, 2, 5, 8]],
]


def geomean(xs):
    return math.exp(sum(math.log(x) for x in xs) / len(xs))


@pytest.fixture(scope="module")
def test_split():
    grid = Grid.from_feeder(replica_feeder())
    scenarios = {s.id: s for s in generate_grid(grid)}
    return grid, [scenarios[sid] for sid in split_dataset(list(scenarios.values()), seed=42)["test"]]


def test_ac1_mode_catalogue(record_property, capsys):
    start = time.perf_counter()
    code = main(["modes"])
    catalogue = ModeCatalogue.build(Grid.from_feeder(replica_feeder()))
    elapsed = time.perf_counter() - start
    out = capsys.readouterr().out
    hist = catalogue.class_histogram()
    record_property("acceptance", f"{len(catalogue)} modes, histogram {hist}, {elapsed:.3f}s")
    assert code == 0 and out.startswith("15 modes")
    assert len(catalogue) == 15
    assert hist == {4: 1, 3: 5, 2: 7, 1: 2}
    assert set(catalogue.modes) == {Mode.from_parts(m) for m in REFERENCE_MODES}
    assert elapsed < 1.0


def test_ac2_scenario_grid(record_property):
    start = time.perf_counter()
    scenarios = generate_grid(Grid.from_feeder(replica_feeder()), GridConfig())
    elapsed = time.perf_counter() - start
    record_property("acceptance", f"{len(scenarios)} scenarios in {elapsed:.3f}s")
    assert len(scenarios) == 1056
    assert elapsed < 1.0


def test_ac3_sync_safety(record_property):
    start = time.perf_counter()
    grid = Grid.from_feeder(replica_feeder())
    resolver = Resolver.from_grid(grid)
    rng = np.random.default_rng(2024)
    unsafe = 0
    for _ in range(10_000):
        T = int(rng.integers(2, 17))
        u_tg = (np.arange(T) >= int(rng.integers(0, T + 1))).astype(int)
        z_root = rng.normal(scale=3.0, size=(T, resolver.n_blocks, resolver.n_labels))
        z_sync = rng.normal(scale=3.0, size=(T, len(resolver.edges)))
        outputs, _ = resolve_sequence(resolver, z_root, z_sync, u_tg)
        sync = sync_matrices(outputs, resolver, u_tg)
        unsafe += sum(not check_transition_safety(sync[t - 1], sync[t]).safe for t in range(1, T))

    feeder, scenario = triple_merge_instance()
    inst = make_instance(feeder, scenario)
    nd_plan, _ = solve(inst, rules=NDMGF)
    eq24 = [v for v in validate_plan(inst, None, nd_plan, SSDMGF) if v.constraint == "eq24"]
    elapsed = time.perf_counter() - start
    record_property("acceptance", f"{unsafe} unsafe transitions in 10^4 tensors, "
                                  f"{len(eq24)} eq24 hits on the NDMGF plan, {elapsed:.1f}s")
    assert unsafe == 0
    assert len(eq24) >= 1
    assert elapsed < 60.0


def test_ac4_oracle_equivalence(record_property):
    start = time.perf_counter()
    toys = toy_suite(24, seed=42, max_blocks=4, max_steps=5)
    worst, invalid = 0.0, 0
    for feeder, scenario in toys:
        inst = make_instance(feeder, scenario)
        plan, _ = solve(inst)
        oracle = brute_force_small(inst)
        worst = max(worst, abs(plan.meta["objective"] - oracle.meta["objective"]))
        invalid += bool(validate_plan(inst, None, plan))
    elapsed = time.perf_counter() - start
    record_property("acceptance", f"{len(toys)} toys, max |gap| {worst:.2e}, {invalid} invalid, {elapsed:.1f}s")
    assert len(toys) >= 20
    assert worst <= 1e-9
    assert invalid == 0
    assert elapsed < 300.0


def test_ac5_warm_starts(record_property, test_split):
    grid, scenarios = test_split
    rng = np.random.default_rng(42)
    accepted = {"AZWS": 0, "CAWS": 0, "OSWS": 0}
    rws_rejected = 0
    for i, scenario in enumerate(scenarios):
        inst = make_instance(grid, scenario)
        oracle, _ = solve(inst, max_nodes=100)
        accepted["AZWS"] += not zero_warm_start(inst).consistency(inst)
        accepted["CAWS"] += not constraint_aware_warm_start(inst).consistency(inst)
        accepted["OSWS"] += not warm_from_plan(inst, oracle).consistency(inst)
        if i < 100:
            rws_rejected += bool(random_warm_start(inst, rng).consistency(inst))
    n_rws = min(100, len(scenarios))

    nodes = {"WWS": [], "CAWS": [], "OSWS": []}
    for feeder, scenario in toy_suite(24, seed=42, max_blocks=4, max_steps=5):
        inst = make_instance(feeder, scenario)
        base, stats = solve(inst)
        nodes["WWS"].append(stats.first_feasible_nodes)
        nodes["CAWS"].append(solve(inst, warm=constraint_aware_warm_start(inst))[1].first_feasible_nodes)
        nodes["OSWS"].append(solve(inst, warm=warm_from_plan(inst, base))[1].first_feasible_nodes)
    gm = {k: geomean(v) for k, v in nodes.items()}
    record_property("acceptance", f"{len(scenarios)} test scenarios, accepted {accepted}, "
                                  f"RWS rejected {rws_rejected}/{n_rws}, first-feasible node geomeans "
                                  + ", ".join(f"{k} {v:.2f}" for k, v in gm.items()))
    assert len(scenarios) == 107
    assert all(v == len(scenarios) for v in accepted.values())
    assert rws_rejected > 0.9 * n_rws
    assert gm["CAWS"] <= gm["WWS"] and gm["OSWS"] <= gm["WWS"]


def test_ac6_physics(record_property, test_split):
    grid, scenarios = test_split
    prm_checks = {"radiality": 0, "soc": 0, "voltage": 0, "clpu": 0, "balance": 0}
    worst_res = 0.0
    clpu_samples = 0
    clpu, _ = clpu_demand(np.ones(6), np.array([0, 0, 1, 1, 1, 1]), (1.0, 0.6, 0.3))
    staircase_ok = np.allclose(clpu[2:], [2.0, 1.6, 1.3, 1.0])
    for scenario in scenarios[:8]:
        inst = make_instance(grid, scenario)
        plan, _ = solve(inst, max_nodes=150)
        feeder = inst.feeder
        arrays = FeederArrays.of(feeder)
        for t in range(plan.T):
            lines, buses, s_t = radiality_terms(plan, t, inst.n_bess_blocks, inst.ssw_lines)
            prm_checks["radiality"] += lines != buses - s_t
            if plan.soc.size:
                prm_checks["soc"] += bool(np.any(plan.soc[t] < 0.2 - 1e-9) or np.any(plan.soc[t] > 1.0 + 1e-9))
            for i in np.flatnonzero(plan.u_b[t]):
                v = plan.v[t, i][arrays.bus_mask[i]]
                prm_checks["voltage"] += bool(np.any(v < 0.9025 - 1e-9) or np.any(v > 1.1025 + 1e-9))
            res_p, res_q = nodal_balance_residuals(feeder, plan, t)
            worst_res = max(worst_res, float(np.abs(res_p).max()), float(np.abs(res_q).max()))
            energized = np.flatnonzero(plan.u_b[t])
            if energized.size:
                inj_p, inj_q = bus_injections(feeder, plan, t)
                closed = np.flatnonzero(plan.u_line[t])
                flow = solve_tree_flow(feeder, energized, closed, inj_p, inj_q)
                check = plan.copy()
                check.p_line[t], check.q_line[t] = flow.p_line, flow.q_line
                rp, rq = nodal_balance_residuals(feeder, check, t)
                worst_res = max(worst_res, float(np.abs(rp).max()), float(np.abs(rq).max()))
        for i in inst.cl_buses:
            on = np.flatnonzero(plan.u_b[:, i])
            if on.size == 0:
                continue
            for t in range(on[0], plan.T):
                base = inst.p_ld[t, i].sum()
                if base > 0:
                    expect = inst.clpu[min(t - on[0], 3)]
                    clpu_samples += 1
                    prm_checks["clpu"] += not np.isclose(plan.p_cl[t, i].sum() / base, expect, atol=1e-9)
    prm_checks["balance"] = int(worst_res > 1e-9)
    record_property("acceptance", f"failures {prm_checks}, {clpu_samples} CL samples, CLPU staircase {clpu[2:].tolist()}, "
                                  f"worst balance residual {worst_res:.1e}")
    assert staircase_ok and clpu_samples > 0
    assert not any(prm_checks.values())


def test_ac7_metrics(record_property):
    rng = np.random.default_rng(3)
    y_root = np.eye(5)[rng.integers(0, 5, size=(6, 12))]
    y_sync = rng.integers(0, 2, size=(6, 3)).astype(float)
    same = metrics(y_root, y_sync, y_root, y_sync)
    ones = np.ones((3, 2))
    root = np.zeros((3, 1, 2))
    root[:, 0, 0] = 1
    spar = metrics(root, ones, root, ones).j_spar
    flip = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    temp = metrics(flip, np.zeros((2, 1)), flip, np.zeros((2, 1))).j_temp
    record_property("acceptance", f"j_root {same.j_root}, j_sync {same.j_sync}, j_spar {spar}, j_temp {temp}")
    assert same.j_root == 0.0 and same.j_sync == 0.0
    assert abs(spar - 1.0) <= 1e-12
    assert abs(temp - 1.0) <= 1e-12
