import numpy as np
import pytest

from ssdmgf.config import NDMGF, RR, SSDMGF
from ssdmgf.engine import Engine
from ssdmgf.optimizer import (
    BRUTE_LIMITS,
    InfeasibleError,
    PartialAssignment,
    apply_warm_start,
    brute_force_small,
    make_instance,
    make_warm_start,
    random_warm_start,
    solve,
    warm_from_plan,
    zero_warm_start,
)
from ssdmgf.plan import validate_plan
from ssdmgf.scenario import Scenario
from ssdmgf.topology import parse_feeder
from ssdmgf.toys import FeederBuilder, holds_idle, random_toy, triple_merge_instance


def test_matches_oracle_on_toys(solved_toys):
    for inst, plan, stats, brute in solved_toys:
        assert stats.optimal
        assert plan.meta["objective"] == pytest.approx(brute.meta["objective"], abs=1e-9)
        assert not validate_plan(inst, None, plan)
        assert not validate_plan(inst, None, brute)


def test_ndmgf_relaxes_ssdmgf(solved_toys):
    """Dropping the merge rule never hurts, and changes nothing when its optimum is already safe."""
    for inst, plan, _, _ in solved_toys:
        other, _ = solve(inst, rules=NDMGF)
        assert other.meta["objective"] >= plan.meta["objective"] - 1e-9
        if not validate_plan(inst, None, other, SSDMGF):
            assert other.meta["objective"] == pytest.approx(plan.meta["objective"], abs=1e-9)


def test_triple_merge_separates_policies():
    feeder, scenario = triple_merge_instance()
    inst = make_instance(feeder, scenario)
    nd, _ = solve(inst, rules=NDMGF)
    ss, _ = solve(inst, rules=SSDMGF)
    assert not validate_plan(inst, None, nd, NDMGF)
    assert any(v.constraint == "eq24" for v in validate_plan(inst, None, nd, SSDMGF))
    assert not validate_plan(inst, None, ss, SSDMGF)
    assert nd.meta["objective"] > ss.meta["objective"]
    assert ss.meta["objective"] == pytest.approx(brute_force_small(inst).meta["objective"], abs=1e-9)


def test_rr_keeps_ssw_open_while_tg_down(replica):
    inst = make_instance(replica, Scenario("spring", 10, 60, None, 6, 15.0))
    plan, _ = solve(inst, rules=RR, max_nodes=300)
    down = inst.u_tg == 0
    assert not plan.u_line[np.ix_(down, list(inst.ssw_lines))].any()
    assert not validate_plan(inst, None, plan, RR)


def test_no_source_reachable_restores_nothing():
    fb = FeederBuilder()
    fb.bus(1)
    fb.bus(2)
    fb.line("E1", 1, 2, "ESW")
    fb.devices.append("TG, TG1, 1, s_max=1.0")
    fb.loads.append("2, CL, 0.1, 0.1, 0.1, 0.95")
    inst = make_instance(parse_feeder(fb.text("dark")), Scenario("spring", 10, 10_000, None, 3, 15.0))
    plan, stats = solve(inst)
    assert plan.meta["objective"] == 0.0
    assert stats.optimal
    assert not plan.u_bk.any()


def test_objective_monotone_in_budget(replica):
    inst = make_instance(replica, Scenario("winter", 8, 120, 4, 6, 15.0))
    small, _ = solve(inst, max_nodes=50)
    large, _ = solve(inst, max_nodes=400)
    assert large.meta["objective"] >= small.meta["objective"] - 1e-9


def test_warm_start_does_not_change_optimum(solved_toys):
    for inst, plan, _, _ in solved_toys[:8]:
        for strategy in ("AZWS", "CAWS", "OSWS", "RWS"):
            warm = make_warm_start(strategy, inst, oracle_plan=plan)
            again, stats = solve(inst, warm=warm)
            assert stats.optimal
            assert again.meta["objective"] == pytest.approx(plan.meta["objective"], abs=1e-9)


def test_warm_start_acceptance(solved_toys):
    for inst, plan, _, _ in solved_toys:
        assert not zero_warm_start(inst).consistency(inst)
        assert not warm_from_plan(inst, plan).consistency(inst)


def test_random_warm_start_mostly_rejected(replica):
    inst = make_instance(replica, Scenario("summer", 12, 60, 3, 8, 15.0))
    rng = np.random.default_rng(7)
    rejected = sum(bool(random_warm_start(inst, rng).consistency(inst)) for _ in range(100))
    assert rejected > 90


def test_wrong_shape_rejected(replica):
    inst = make_instance(replica, Scenario("summer", 12, 60, 3, 4, 15.0))
    warm = PartialAssignment("X", u_ssw=np.zeros((2, 3), dtype=np.int8))
    assert "shape" in warm.consistency(inst)[0]


def test_rr_rejects_early_ssw(replica):
    inst = make_instance(replica, Scenario("summer", 12, 60, 3, 6, 15.0))
    warm = zero_warm_start(inst)
    assert not warm.consistency(inst, RR)
    warm.u_ssw[:, 0] = 1
    assert any("TG" in r for r in warm.consistency(inst, RR))


def test_apply_warm_start(solved_toys):
    inst, plan, _, _ = solved_toys[0]
    eng = Engine(inst, SSDMGF)
    ok, reasons, actions = apply_warm_start(eng, warm_from_plan(inst, plan))
    assert ok and not reasons
    assert actions is not None and len(actions) == inst.T
    rows = eng.rollout(actions)
    assert len(rows) == inst.T
    bad = warm_from_plan(inst, plan)
    bad.u_mode = np.ones_like(bad.u_mode) if bad.u_mode.shape[1] > 1 else np.full_like(bad.u_mode, 2)
    ok, reasons, actions = apply_warm_start(eng, bad)
    assert not ok and reasons and actions is None


def test_partial_assignment_round_trip(tmp_path, solved_toys):
    inst, plan, _, _ = solved_toys[1]
    warm = warm_from_plan(inst, plan)
    warm.save(tmp_path / "w.json")
    back = PartialAssignment.load(tmp_path / "w.json")
    assert back.strategy == "OSWS"
    for name in PartialAssignment.FAMILIES:
        assert np.array_equal(getattr(back, name), getattr(warm, name))


def test_unknown_strategy(solved_toys):
    with pytest.raises(ValueError):
        make_warm_start("NOPE", solved_toys[0][0])


def test_brute_force_refuses_large(replica):
    inst = make_instance(replica, Scenario("spring", 10, 60, None, 3, 15.0))
    assert inst.K > BRUTE_LIMITS["blocks"]
    with pytest.raises(ValueError):
        brute_force_small(inst)


def first_infeasible_toy():
    rng = np.random.default_rng(3)
    for _ in range(500):
        feeder, scenario = random_toy(rng, max_blocks=3, max_steps=3)
        if not holds_idle(feeder, scenario):
            inst = make_instance(feeder, scenario)
            try:
                brute_force_small(inst)
            except InfeasibleError:
                return inst
    pytest.skip("no infeasible toy in the sample")


def test_infeasible_instance_raises():
    inst = first_infeasible_toy()
    with pytest.raises(InfeasibleError):
        solve(inst)
