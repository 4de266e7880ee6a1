import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdmgf.optimizer import make_instance
from ssdmgf.plan import RestorationPlan
from ssdmgf.powerflow import (
    FeederArrays,
    nodal_balance_residuals,
    security_check,
    solve_tree_flow,
    voltage_drop_check,
)
from ssdmgf.scenario import Scenario
from ssdmgf.topology import parse_feeder
from ssdmgf.toys import FeederBuilder


def feeder_from(lines, n_bus, tg_bus=1, r=None):
    fb = FeederBuilder()
    for b in range(1, n_bus + 1):
        fb.bus(b)
    for lid, a, b, kind in lines:
        fb.line(lid, a, b, kind)
    fb.devices.append(f"TG, TG1, {tg_bus}, s_max=2.0")
    text = fb.text("pf")
    if r is not None:
        text = text.replace("0.002 0.0008 0.0008 0.0008 0.002 0.0008 0.0008 0.0008 0.002", r)
    return parse_feeder(text)


def blank_plan(feeder, T=2):
    return RestorationPlan.empty(make_instance(feeder, Scenario("spring", 10, 0, None, T, 15.0)))


def test_isolated_bus_zero_residual():
    f = feeder_from([("E1", 1, 2, "ESW")], 2)
    plan = blank_plan(f)
    plan.u_b[0] = [1, 0]
    res_p, res_q = nodal_balance_residuals(f, plan, 0)
    assert np.all(res_p == 0) and np.all(res_q == 0)


def test_two_bus_balance():
    f = feeder_from([("L1", 1, 2, "LN")], 2)
    plan = blank_plan(f)
    plan.u_b[0] = 1
    plan.u_line[0] = 1
    plan.p_tg[0] = 0.1
    plan.p_cl[0, 1] = 0.1
    plan.p_line[0, 0] = 0.1
    res_p, _ = nodal_balance_residuals(f, plan, 0)
    assert np.abs(res_p).max() == pytest.approx(0.0, abs=1e-15)
    plan.p_line[0, 0] = 0.0
    res_p, _ = nodal_balance_residuals(f, plan, 0)
    assert np.allclose(np.abs(res_p[1]), 0.1)
    assert np.allclose(res_p[0], 0.1)


def test_zero_flow_equal_voltages():
    f = feeder_from([("L1", 1, 2, "LN")], 2)
    plan = blank_plan(f)
    plan.u_line[0] = 1
    plan.v[0] = 1.0
    assert not voltage_drop_check(f, plan, 0)


def test_single_phase_drop():
    diag = "0.01 0 0 0 0.01 0 0 0 0.01"
    f = feeder_from([("L1", 1, 2, "LN")], 2, r=diag)
    plan = blank_plan(f)
    plan.u_line[0] = 1
    plan.p_line[0, 0] = [0.5, 0.0, 0.0]
    plan.v[0, 0] = 1.0
    plan.v[0, 1] = [0.99, 1.0, 1.0]
    assert not voltage_drop_check(f, plan, 0)
    plan.v[0, 1] = 1.0
    bad = voltage_drop_check(f, plan, 0)
    assert [v.constraint for v in bad] == ["eq35"]
    assert bad[0].residual == pytest.approx(0.01)


def test_open_line_relaxed():
    f = feeder_from([("E1", 1, 2, "ESW")], 2)
    plan = blank_plan(f)
    plan.v[0] = [[1.05**2] * 3, [0.0] * 3]
    assert not voltage_drop_check(f, plan, 0)


def test_dead_bus_passes_security():
    f = feeder_from([("E1", 1, 2, "ESW")], 2)
    assert not security_check(f, blank_plan(f), 0)


def test_voltage_band_is_squared():
    f = feeder_from([("L1", 1, 2, "LN")], 2)
    plan = blank_plan(f)
    plan.u_b[0] = 1
    plan.u_line[0] = 1
    plan.v[0] = 0.9025
    assert not security_check(f, plan, 0)
    plan.v[0, 1] = 0.95
    plan.v[0, 0] = 1.1025 + 1e-3
    assert [v.constraint for v in security_check(f, plan, 0)] == ["eq36b"]


def test_ssw_closing_with_flow_flagged():
    f = feeder_from([("S1", 1, 2, "SSW")], 2)
    plan = blank_plan(f)
    plan.u_b[:] = 1
    plan.v[:] = 1.0
    plan.u_line[1] = 1
    plan.p_line[1, 0] = 0.05
    assert "eq19" in [v.constraint for v in security_check(f, plan, 1)]
    plan.p_line[1, 0] = 0.0
    assert not security_check(f, plan, 1)


def test_single_root_no_load():
    f = feeder_from([("L1", 1, 2, "LN"), ("L2", 2, 3, "LN")], 3)
    z = np.zeros((3, 3))
    fs = solve_tree_flow(f, [0, 1, 2], [0, 1], z, z)
    assert np.allclose(fs.v, 1.0)
    assert np.allclose(fs.p_line, 0.0)


def test_chain_flows_telescope():
    f = feeder_from([("L1", 1, 2, "LN"), ("L2", 2, 3, "LN")], 3)
    inj = np.zeros((3, 3))
    inj[1] = -0.1
    inj[2] = -0.2
    inj[0] = 0.3
    fs = solve_tree_flow(f, [0, 1, 2], [0, 1], inj, np.zeros((3, 3)))
    assert np.allclose(fs.p_line[1], 0.2)
    assert np.allclose(fs.p_line[0], 0.3)


def flow_plan(f, fs, inj_p, inj_q, energized, closed):
    plan = blank_plan(f)
    plan.u_b[0, energized] = 1
    plan.u_line[0, closed] = 1
    plan.p_line[0], plan.q_line[0], plan.v[0] = fs.p_line, fs.q_line, fs.v
    plan.p_tg[0] = inj_p[0]
    plan.q_tg[0] = inj_q[0]
    plan.p_pv[0] = inj_p
    plan.q_pv[0] = inj_q
    plan.p_pv[0, 0] = 0
    plan.q_pv[0, 0] = 0
    return plan


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.2, 0.2), min_size=12, max_size=12), st.lists(st.floats(-0.2, 0.2), min_size=12, max_size=12))
def test_tree_flow_self_consistent(ps, qs):
    f = feeder_from([("L1", 1, 2, "LN"), ("L2", 2, 3, "LN"), ("L3", 2, 4, "LN")], 4)
    inj_p = np.array(ps).reshape(4, 3)
    inj_q = np.array(qs).reshape(4, 3)
    inj_p[0] = -inj_p[1:].sum(axis=0)
    inj_q[0] = -inj_q[1:].sum(axis=0)
    fs = solve_tree_flow(f, range(4), range(3), inj_p, inj_q)
    plan = flow_plan(f, fs, inj_p, inj_q, list(range(4)), [0, 1, 2])
    rp, rq = nodal_balance_residuals(f, plan, 0)
    assert np.abs(rp).max() <= 1e-9 and np.abs(rq).max() <= 1e-9
    assert not voltage_drop_check(f, plan, 0, tol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9), st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_flows_superpose(a, b):
    f = feeder_from([("L1", 1, 2, "LN"), ("L2", 2, 3, "LN")], 3)
    pa, pb = np.array(a).reshape(3, 3), np.array(b).reshape(3, 3)
    z = np.zeros((3, 3))
    fa = solve_tree_flow(f, range(3), range(2), pa, z)
    fb = solve_tree_flow(f, range(3), range(2), pb, z)
    fab = solve_tree_flow(f, range(3), range(2), pa + pb, z)
    assert np.allclose(fab.p_line, fa.p_line + fb.p_line, atol=1e-12)


def test_open_switch_decouples():
    f = feeder_from([("L1", 1, 2, "LN"), ("E1", 2, 3, "ESW"), ("L2", 3, 4, "LN")], 4, tg_bus=1)
    inj = np.zeros((4, 3))
    inj[1] = -0.1
    base = solve_tree_flow(f, range(4), [0, 2], inj, np.zeros((4, 3)))
    inj2 = inj.copy()
    inj2[3] = -0.3
    other = solve_tree_flow(f, range(4), [0, 2], inj2, np.zeros((4, 3)))
    assert np.allclose(base.p_line[0], other.p_line[0])
    assert np.allclose(base.v[:2], other.v[:2])


def test_arrays_phase_masks(replica):
    arr = FeederArrays.of(replica)
    assert arr.bus_mask.shape == (len(replica.buses), 3)
    assert arr.line_mask.shape == (len(replica.lines), 3)
    assert arr.bus_mask[replica.bus_pos[29]].tolist() == [True, False, False]
