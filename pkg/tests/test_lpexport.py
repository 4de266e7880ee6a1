import pytest

from ssdmgf.config import NDMGF, RR, SSDMGF
from ssdmgf.lpexport import LpModel, export_model
from ssdmgf.optimizer import make_instance, solve
from ssdmgf.scenario import Scenario
from ssdmgf.toys import triple_merge_instance

highspy = pytest.importorskip("highspy")


def milp_optimum(model: LpModel, tmp_path) -> float:
    path = model.write(tmp_path / f"{model.name}.lp")
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", 120.0)
    h.setOptionValue("mip_rel_gap", 0.0)
    h.readModel(str(path))
    h.run()
    assert h.getModelStatus() == highspy.HighsModelStatus.kOptimal
    return h.getInfo().objective_function_value


def test_milp_brackets_search(solved_toys, tmp_path):
    """The search space is a restriction of the model; without NL loads they coincide."""
    for inst, plan, _, brute in solved_toys[:12]:
        value = milp_optimum(export_model(inst), tmp_path)
        assert value >= brute.meta["objective"] - 1e-6
        if all(ld.kind == "CL" for ld in inst.feeder.loads.values()):
            assert value == pytest.approx(brute.meta["objective"], abs=1e-6)


def test_triple_merge_milp_respects_rule(tmp_path):
    inst = make_instance(*triple_merge_instance())
    safe = milp_optimum(export_model(inst, rules=SSDMGF), tmp_path)
    free = milp_optimum(export_model(inst, rules=NDMGF), tmp_path)
    assert free > safe + 1e-6
    assert safe >= solve(inst)[0].meta["objective"] - 1e-6


def test_variable_census(solved_toys):
    inst = solved_toys[0][0]
    m = export_model(inst)
    fam = m.family_counts()
    assert fam["ubk"] == inst.K * inst.T
    assert fam["ub"] == len(inst.feeder.buses) * inst.T
    assert fam["ul"] == len(inst.feeder.lines) * inst.T
    assert fam["p_line"] == 3 * len(inst.feeder.lines) * inst.T
    assert fam["um"] == len(inst.catalogue) * inst.T
    assert m.n_binary == sum(v.binary for v in m.variables.values())
    assert m.n_vars == sum(fam.values())


def test_rule_specific_rows(replica):
    inst = make_instance(replica, Scenario("spring", 10, 60, None, 6, 15.0))
    down = int((inst.u_tg == 0).sum())
    rr = export_model(inst, rules=RR).row_counts()
    ss = export_model(inst, rules=SSDMGF).row_counts()
    nd = export_model(inst, rules=NDMGF).row_counts()
    assert rr["rrlockout"] == down * len(inst.ssw_lines)
    assert "rrlockout" not in ss
    assert ss["eq24"] > 0
    assert "eq24" not in nd


def test_lp_text_is_deterministic(solved_toys):
    inst = solved_toys[2][0]
    text = export_model(inst).to_lp()
    assert text == export_model(inst).to_lp()
    assert text.splitlines()[0].startswith("\\")
    for head in ("Maximize", "Subject To", "Bounds", "End"):
        assert head in text


def test_duplicate_variable_and_contradiction():
    m = LpModel("x")
    m.var("a", "f")
    with pytest.raises(KeyError):
        m.var("a", "f")
    m.row("ok", {}, "<=", 1.0)
    assert not m.rows
    with pytest.raises(ValueError):
        m.row("bad", {}, "=", 1.0)
