import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssdmgf.topology import (
    BackboneEdge,
    BackboneGraph,
    FeederFormatError,
    FeederValidationError,
    Grid,
    build_backbone,
    dump_feeder,
    enumerate_simple_paths,
    load_feeder,
    parse_feeder,
    partition_blocks,
)
from ssdmgf.toys import FeederBuilder

TWO_BUS = """
[buses]
1, abc
2, abc
[lines]
L1, 1, 2, abc, LN, 0.01 0 0 0 0.01 0 0 0 0.01, 0.02 0 0 0 0.02 0 0 0 0.02, 1 1 1, 1 1 1
[devices]
TG, TG1, 1, s_max=1.0
"""


def chain(kinds, tg_bus=1, extra_devices=()):
    fb = FeederBuilder()
    for b in range(1, len(kinds) + 2):
        fb.bus(b)
    for i, kind in enumerate(kinds):
        fb.line(f"L{i + 1}", i + 1, i + 2, kind)
    fb.devices += [f"TG, TG1, {tg_bus}, s_max=1.0", *extra_devices]
    return parse_feeder(fb.text("chain"))


def test_two_bus_document():
    f = parse_feeder(TWO_BUS)
    assert len(f.buses) == 2
    assert len(f.lines) == 1
    assert f.lines[0].kind == "LN"


def test_replica_shape(replica, replica_grid):
    kinds = [ln.kind for ln in replica.lines]
    assert kinds.count("ESW") == 9
    assert kinds.count("SSW") == 3
    assert replica_grid.n_blocks == 12
    assert replica_grid.backbone.n_vertices == 12
    assert len(replica_grid.backbone.edges) == 12
    assert len(replica_grid.backbone.ssw_edges) == 3


def test_replica_sources(replica_grid):
    assert replica_grid.tg_block == 0
    assert replica_grid.bess_blocks == (2, 5, 8)


def test_ssw_inside_block_rejected():
    fb = FeederBuilder()
    for b in (1, 2, 3):
        fb.bus(b)
    fb.line("L1", 1, 2, "LN")
    fb.line("L2", 2, 3, "LN")
    fb.line("S1", 1, 3, "SSW")
    fb.devices.append("TG, TG1, 1, s_max=1.0")
    with pytest.raises(FeederValidationError):
        parse_feeder(fb.text("self loop"))


def test_parse_error_reports_line():
    bad = TWO_BUS.replace("0.01 0 0 0 0.01", "0.01 0 zz 0 0.01", 1)
    with pytest.raises(FeederFormatError) as exc:
        parse_feeder(bad)
    assert exc.value.line == 6


def test_missing_tg_rejected():
    with pytest.raises(FeederValidationError):
        parse_feeder(TWO_BUS.replace("TG, TG1, 1, s_max=1.0", ""))


def test_dump_round_trip(replica, tmp_path):
    path = tmp_path / "copy.feeder"
    path.write_text(dump_feeder(replica))
    again = load_feeder(path)
    assert again.digest() == replica.digest()
    assert dump_feeder(again) == dump_feeder(replica)


def test_no_switches_single_block():
    p = partition_blocks(chain(["LN", "LN", "LN"]))
    assert p.n_blocks == 1
    assert sorted(p.blocks[0]) == [1, 2, 3, 4]


def test_esw_pair_gives_singletons():
    p = partition_blocks(chain(["ESW"]))
    assert p.n_blocks == 2
    assert sorted(map(tuple, p.blocks)) == [(1,), (2,)]


def test_tau_total_and_surjective(replica):
    p = partition_blocks(replica)
    assert set(p.tau) == set(replica.buses)
    assert set(p.tau.values()) == set(range(p.n_blocks))


def test_partition_idempotent_without_switches(replica):
    p = partition_blocks(replica)
    for members in p.blocks:
        sub = FeederBuilder()
        ids = set(members)
        for b in members:
            sub.bus(b)
        for ln in replica.lines:
            if ln.kind == "LN" and ln.from_bus in ids and ln.to_bus in ids:
                sub.line(ln.id, ln.from_bus, ln.to_bus, "LN")
        sub.devices.append(f"TG, TG1, {min(members)}, s_max=1.0")
        if len(members) == 1 or sub.lines:
            assert partition_blocks(parse_feeder(sub.text("block"))).n_blocks == 1


def test_chain_backbone_is_path():
    f = chain(["ESW", "ESW"])
    g = build_backbone(partition_blocks(f), f)
    assert g.n_vertices == 3
    assert sorted(e.pair for e in g.edges) == [(0, 1), (1, 2)]


def test_parallel_switches_collapse():
    fb = FeederBuilder()
    for b in (1, 2, 3, 4):
        fb.bus(b)
    fb.line("L1", 1, 2, "LN")
    fb.line("L2", 3, 4, "LN")
    fb.line("E1", 1, 3, "ESW")
    fb.line("E2", 2, 4, "ESW")
    fb.devices.append("TG, TG1, 1, s_max=1.0")
    f = parse_feeder(fb.text("parallel"))
    g = Grid.from_feeder(f).backbone
    assert len(g.edges) == 1
    assert sorted(g.edges[0].lines) == ["E1", "E2"]


def test_every_edge_has_an_origin(replica, replica_grid):
    tau = replica_grid.partition.tau
    for e in replica_grid.backbone.edges:
        ends = [{tau[replica.line(lid).from_bus], tau[replica.line(lid).to_bus]} for lid in e.lines]
        assert {e.u, e.v} in ends


def graph(n, edges):
    return BackboneGraph(n, tuple(BackboneEdge(a, b, (f"X{i}",), False) for i, (a, b) in enumerate(edges)))


def test_paths_on_path_graph():
    paths = enumerate_simple_paths(graph(3, [(0, 1), (1, 2)]), 0, 2)
    assert [p.vertices for p in paths] == [(0, 1, 2)]


def test_paths_on_square():
    paths = enumerate_simple_paths(graph(4, [(0, 1), (1, 2), (2, 3), (0, 3)]), 0, 2)
    assert len(paths) == 2


def test_paths_disconnected():
    assert enumerate_simple_paths(graph(4, [(0, 1), (2, 3)]), 0, 3) == []


def brute_paths(n, edges, s, t):
    adj = {(a, b) for a, b in edges} | {(b, a) for a, b in edges}
    found = set()
    others = [v for v in range(n) if v not in (s, t)]
    for r in range(len(others) + 1):
        for mid in itertools.permutations(others, r):
            seq = (s, *mid, t)
            if all((seq[i], seq[i + 1]) in adj for i in range(len(seq) - 1)):
                found.add(seq)
    return found


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7).flatmap(lambda n: st.tuples(
    st.just(n),
    st.sets(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] < e[1]), max_size=12),
)))
def test_paths_match_bruteforce(case):
    n, edges = case
    edges = sorted(edges)
    g = graph(n, edges)
    for s, t in itertools.combinations(range(n), 2):
        got = {p.vertices for p in enumerate_simple_paths(g, s, t)}
        assert got == brute_paths(n, edges, s, t)
        for p in got:
            assert len(set(p)) == len(p)


def test_line_matrices_symmetric(replica):
    for ln in replica.lines:
        assert np.allclose(ln.r, ln.r.T)
        assert np.allclose(ln.x, ln.x.T)
