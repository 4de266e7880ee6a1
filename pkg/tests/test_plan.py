import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ssdmgf.config import Params
from ssdmgf.optimizer import make_instance, solve
from ssdmgf.plan import (
    FrequencySurrogate,
    RestorationPlan,
    bess_step,
    clpu_demand,
    frequency_trajectory,
    objective_value,
    pv_output,
    radiality_terms,
    validate_plan,
)
from ssdmgf.scenario import Scenario
from ssdmgf.topology import parse_feeder
from ssdmgf.toys import FeederBuilder


def tg_only(nu=10_000, T=3):
    fb = FeederBuilder()
    fb.bus(1)
    fb.bus(2)
    fb.line("E1", 1, 2, "ESW")
    fb.devices.append("TG, TG1, 1, s_max=2.0")
    fb.loads.append("2, CL, 0.1, 0.1, 0.1, 0.95")
    return make_instance(parse_feeder(fb.text("tg only")), Scenario("spring", 10, nu, None, T, 15.0))


def two_bess():
    """Two battery blocks joined by an ESW, TG block hanging off the second one."""
    fb = FeederBuilder()
    for b in (1, 2, 3):
        fb.bus(b)
    fb.line("E1", 1, 2, "ESW")
    fb.line("E2", 2, 3, "ESW")
    fb.devices += [
        "TG, TG1, 3, s_max=2.0",
        "BESS, BA, 1, s_nom=1.0, e_nom=2.0",
        "BESS, BB, 2, s_nom=1.0, e_nom=2.0",
    ]
    fb.loads += ["1, CL, 0.05, 0.05, 0.05, 0.95", "2, CL, 0.05, 0.05, 0.05, 0.95"]
    return make_instance(parse_feeder(fb.text("two bess")), Scenario("spring", 10, 10_000, None, 3, 15.0))


def test_objective_nothing_restored():
    assert objective_value(RestorationPlan.empty(tg_only())) == 0.0


def test_objective_hand_value():
    plan = RestorationPlan.empty(tg_only(T=2))
    plan.p_cl[:, 1] = 0.1
    assert objective_value(plan, 10.0, 1.0) == pytest.approx(90.0)


def test_objective_weight_ratio():
    plan = RestorationPlan.empty(tg_only(T=2))
    plan.p_nl[:, 1] = 0.1
    as_nl = objective_value(plan)
    plan.p_cl[:], plan.p_nl[:] = plan.p_nl, 0.0
    assert as_nl / objective_value(plan) == pytest.approx(1 / 10)


def test_all_dead_plan_is_feasible():
    inst = tg_only()
    assert not validate_plan(inst, None, RestorationPlan.empty(inst))


def test_esw_between_live_blocks_flagged():
    inst = two_bess()
    plan, _ = solve(inst)
    assert not validate_plan(inst, None, plan)
    bad = plan.copy()
    e1 = inst.feeder.line_pos["E1"]
    bad.u_line[1:, e1] = 1
    tags = {v.constraint for v in validate_plan(inst, None, bad)}
    assert "eq26b" in tags
    hit = [v for v in validate_plan(inst, None, bad) if v.constraint == "eq26b"][0]
    assert hit.residual == 1


def test_radiality_counterexample_flagged(replica):
    inst = make_instance(replica, Scenario("spring", 10, 10_000, None, 3, 15.0))
    plan, _ = solve(inst, max_nodes=500)
    t = 1
    lines, buses, s_t = radiality_terms(plan, t, inst.n_bess_blocks, inst.ssw_lines)
    assert s_t == 3 and lines == buses - 3
    bad = plan.copy()
    ln = next(li for li in inst.block_ln_lines[inst.grid.bess_blocks[0]])
    bad.u_line[t, ln] = 0
    tags = {v.constraint for v in validate_plan(inst, None, bad) if v.t == t}
    assert "eq28a" in tags


@pytest.mark.parametrize("tg, closed, expect", [(1, [0], 3), (0, [], 3), (1, [0, 1, 2], 1)])
def test_radiality_s_t(replica, tg, closed, expect):
    inst = make_instance(replica, Scenario("spring", 10, 0 if tg else 10_000, None, 1, 15.0))
    plan = RestorationPlan.empty(inst)
    for j in closed:
        plan.u_line[0, inst.ssw_lines[j]] = 1
    assert radiality_terms(plan, 0, 3, inst.ssw_lines)[2] == expect


def test_clpu_never_energized():
    p, q = clpu_demand(np.ones(6), np.zeros(6), (1.0, 0.6, 0.3))
    assert np.all(p == 0) and np.all(q == 0)


def test_clpu_staircase():
    u = np.array([0, 0, 1, 1, 1, 1, 1, 1])
    p, _ = clpu_demand(np.ones(8), u, (1.0, 0.6, 0.3))
    assert p.tolist() == pytest.approx([0, 0, 2.0, 1.6, 1.3, 1.0, 1.0, 1.0])


def test_clpu_reactive_follows_tan():
    u = np.array([1, 1])
    p, q = clpu_demand(np.full((2, 3), 0.1), u, (1.0, 0.6, 0.3), tan_phi=0.5)
    assert np.allclose(q, 0.5 * p)


@given(st.integers(0, 10), st.integers(1, 10))
def test_clpu_returns_to_nominal(start, tail):
    u = np.r_[np.zeros(start), np.ones(3 + tail)]
    p, _ = clpu_demand(np.full(len(u), 0.7), u, (1.0, 0.6, 0.3))
    assert np.all(p[start + 3 :] == 0.7)


def test_bess_step_arithmetic():
    assert bess_step(0.5, [0, 0, 0], 0.25, 2.0) == (0.5, True)
    soc, ok = bess_step(0.9, [1 / 3] * 3, 0.25, 2.0)
    assert soc == pytest.approx(0.775) and ok
    assert not bess_step(0.25, [1.0, 0, 0], 0.25, 1.0)[1]
    assert not bess_step(0.95, [-1.0, 0, 0], 0.25, 1.0)[1]


def test_pv_output():
    p, _ = pv_output(np.zeros(4), np.full(4, 0.5), 0.3, 0.0)
    assert np.all(p == 0)
    p, _ = pv_output(np.array([0, 1, 1, 1]), np.full(4, 0.5), 0.3, 0.0)
    assert np.allclose(p[2], 0.05)
    assert np.all(p[:2] == 0)
    p0, _ = pv_output(np.array([0, 1, 1, 1]), np.full(4, 0.5), 0.3, 0.0, delay=0)
    assert np.allclose(p0[1], 0.05)


def test_surrogate_qss():
    sur = FrequencySurrogate(np.array([0.2]), np.array([1.0]), Params())
    assert sur.qss(np.array([0.5]))[0] == pytest.approx(59.9)
    assert sur.qss(np.array([0.0]))[0] == 60.0


def test_tg_block_at_nominal_frequency(replica):
    inst = make_instance(replica, Scenario("spring", 10, 0, None, 3, 15.0))
    plan, _ = solve(inst, max_nodes=300)
    f_block, _ = frequency_trajectory(inst, plan)[:2]
    assert np.all(f_block[:, inst.grid.tg_block] == 60.0)


def test_save_load_round_trip(tmp_path):
    inst = two_bess()
    plan, _ = solve(inst)
    for target in (tmp_path / "plan_dir", tmp_path / "plan.csv"):
        plan.save(target, {"note": "x"})
        again = RestorationPlan.load(target)
        for name in ("u_bk", "u_line", "u_mode", "p_cl", "v", "soc", "soc0"):
            assert np.array_equal(getattr(again, name), getattr(plan, name))
        assert again.meta["note"] == "x"
        assert not validate_plan(inst, None, again)


def test_load_missing_plan(tmp_path):
    with pytest.raises(FileNotFoundError):
        RestorationPlan.load(tmp_path / "nope.csv")


def test_plan_invariants(solved_toys):
    """Monotone families, block homogeneity and class consistency on solver output."""
    for inst, plan, _, _ in solved_toys:
        for name in ("u_bk", "u_sync", "u_nlb"):
            arr = getattr(plan, name).astype(int)
            assert np.all(np.diff(arr, axis=0) >= 0), name
        ssw = plan.u_line[:, list(inst.ssw_lines)].astype(int)
        assert np.all(np.diff(ssw, axis=0) >= 0)
        for t in range(plan.T):
            for k in range(inst.K):
                assert all(plan.u_b[t, b] == plan.u_bk[t, k] for b in inst.block_buses[k])
            if inst.active_bs(t):
                classes = np.arange(1, plan.u_class.shape[1] + 1)
                assert int((classes * plan.u_class[t]).sum()) == plan.s[t]
                assert plan.u_mode[t].sum() == 1
