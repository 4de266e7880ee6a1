from hypothesis import given
from hypothesis import strategies as st

from ssdmgf.unionfind import DisjointSet


def test_union_and_groups():
    d = DisjointSet(range(5))
    assert d.union(0, 3)
    assert not d.union(3, 0)
    d.union(1, 4)
    assert d.connected(0, 3)
    assert not d.connected(0, 1)
    assert sorted(d.groups()) == [(0, 3), (1, 4), (2,)]


def test_lazy_registration():
    d = DisjointSet()
    assert d.find("x") == "x"
    assert "x" in d


@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=30))
def test_matches_naive_components(pairs):
    d = DisjointSet(range(10))
    label = list(range(10))
    for a, b in pairs:
        d.union(a, b)
        la, lb = label[a], label[b]
        label = [la if x == lb else x for x in label]
    for a in range(10):
        for b in range(10):
            assert d.connected(a, b) == (label[a] == label[b])
