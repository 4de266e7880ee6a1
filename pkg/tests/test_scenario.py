import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdmgf.optimizer import make_instance
from ssdmgf.plan import RestorationPlan
from ssdmgf.scenario import (
    SEASONS,
    FeatureTensor,
    GridConfig,
    Scenario,
    build_features,
    extract_labels,
    generate_grid,
    split_dataset,
)


def test_replica_grid_size(replica_grid):
    scenarios = generate_grid(replica_grid)
    assert len(scenarios) == 4 * 11 * 3 * 8
    assert len({s.id for s in scenarios}) == 1056


def test_tiny_grid(replica_grid):
    cfg = GridConfig(seasons=("spring",), t0s=(8,), nus=(60,), damaged=(1, 3))
    assert [s.damaged for s in generate_grid(replica_grid, cfg)] == [1, 3]


def test_grid_deterministic(replica_grid):
    assert generate_grid(replica_grid) == generate_grid(replica_grid)


def test_damaging_a_source_rejected(replica_grid):
    with pytest.raises(ValueError):
        generate_grid(replica_grid, GridConfig(damaged=(2,)))


@settings(max_examples=25, deadline=None)
@given(
    st.sets(st.sampled_from(SEASONS), min_size=1),
    st.sets(st.integers(0, 23), min_size=1, max_size=5),
    st.sets(st.sampled_from([15, 30, 60, 120]), min_size=1),
    st.sets(st.sampled_from([1, 3, 4, 6, 7, 9, 10, 11]), min_size=1),
)
def test_grid_count_is_product(replica_grid, seasons, t0s, nus, damaged):
    cfg = GridConfig(tuple(sorted(seasons)), tuple(sorted(t0s)), tuple(sorted(nus)), tuple(sorted(damaged)))
    got = [(s.season, s.t0, s.nu, s.damaged) for s in generate_grid(replica_grid, cfg)]
    assert got == list(itertools.product(cfg.seasons, cfg.t0s, cfg.nus, cfg.damaged))


def test_horizon_covers_outage_and_tail():
    cfg = GridConfig()
    assert cfg.horizon() == (240 + 240) // 15


def test_scenario_round_trip(tmp_path):
    s = Scenario("winter", 7, 120, 3, 10, 15.0)
    s.save(tmp_path / "s.json")
    assert Scenario.load(tmp_path / "s.json") == s
    assert s.id == "winter-t07-nu120-k3"


def test_u_tg_step():
    s = Scenario("spring", 10, 60, None, 8, 15.0)
    assert s.u_tg().tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_split_ratios(replica_grid):
    split = split_dataset(generate_grid(replica_grid), seed=42)
    sizes = {k: len(v) for k, v in split.items()}
    assert sizes == {"train": 844, "val": 105, "test": 107}
    assert not set(split["train"]) & set(split["test"])
    assert split == split_dataset(generate_grid(replica_grid), seed=42)


def test_features_channels(replica, replica_grid):
    s = Scenario("summer", 9, 60, 4, 8, 15.0)
    ft = build_features(s, replica, replica_grid)
    assert ft.x.shape == (8, 12, 10)
    no_bess = [k for k in range(12) if k not in replica_grid.bess_blocks]
    assert np.all(ft.channel("s_bess")[:, no_bess] == 0)
    assert np.all(ft.channel("e_bess")[:, no_bess] == 0)
    assert np.array_equal(ft.channel("u_tg")[:, 0], s.u_tg().astype(float))
    assert ft.channel("n_ssw")[0].sum() == 2 * 3
    assert ft.channel("y_dmg")[0].tolist() == [1.0 if k == 4 else 0.0 for k in range(12)]


def test_features_deterministic_bytes(replica, replica_grid):
    s = Scenario("fall", 12, 120, 6, 5, 15.0)
    a = build_features(s, replica, replica_grid).to_bytes()
    assert a == build_features(s, replica, replica_grid).to_bytes()
    back = FeatureTensor.from_bytes(a)
    assert back.to_bytes() == a


def test_dead_plan_labels(replica):
    inst = make_instance(replica, Scenario("spring", 10, 10_000, 4, 4, 15.0))
    y_root, y_sync = extract_labels(RestorationPlan.empty(inst), inst.grid)
    assert np.all(y_root[:, :, 0] == 1)
    assert not y_sync.any()


def test_damaged_block_labelled_dead(solved_toys):
    for inst, plan, _, _ in solved_toys:
        y_root, _ = extract_labels(plan, inst.grid)
        if inst.scenario.damaged is not None:
            assert np.all(y_root[:, inst.scenario.damaged, 0] == 1)
        assert np.all(y_root.sum(axis=2) == 1)
