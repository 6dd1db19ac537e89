from itertools import combinations

import networkx as nx
import pytest
from conftest import case
from hypothesis import given, settings
from hypothesis import strategies as st

from opfbound.chordal import (
    chordal_extend,
    clique_sizes,
    decompose_case,
    is_chordal_extension,
    linking_entry_count,
    linking_pairs,
    local_index,
    pair_entries,
)
from opfbound.errors import DisconnectedGraph

SMALL = ["case2", "case4", "case9", "case14", "case30"]


def filled_graph(n, edges, dec):
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(edges)
    g.add_edges_from(dec.fill_edges)
    return g


def brute_chordal(g):
    """Chordal iff simplicial vertices can be removed one at a time until empty."""
    g = g.copy()
    while g.number_of_nodes():
        for v in sorted(g.nodes):
            nb = list(g.neighbors(v))
            if all(g.has_edge(a, b) for a, b in combinations(nb, 2)):
                g.remove_node(v)
                break
        else:
            return False
    return True


def case_edges(c):
    f, t = c.branch_ends()
    return list(zip(f.tolist(), t.tolist()))


def test_four_bus_ring_cliques():
    dec = decompose_case(case("case4"))
    labelled = sorted(tuple(v + 1 for v in c) for c in dec.cliques)
    assert labelled == [(1, 2, 3), (1, 3, 4)]
    assert dec.fill_edges == ((0, 2),)
    assert set(dec.cliques[0]) & set(dec.cliques[1]) == {0, 2}


def test_path_has_edge_cliques():
    dec = chordal_extend(5, [(0, 1), (1, 2), (2, 3), (3, 4)])
    assert sorted(dec.cliques) == [(0, 1), (1, 2), (2, 3), (3, 4)]
    assert dec.fill_edges == ()


def test_single_vertex():
    dec = chordal_extend(1, [])
    assert dec.cliques == ((0,),)
    assert linking_pairs(dec) == []


def test_disconnected():
    with pytest.raises(DisconnectedGraph):
        chordal_extend(4, [(0, 1), (2, 3)])


@pytest.mark.parametrize("name", SMALL)
def test_brute_force_chordality(name):
    c = case(name)
    edges = case_edges(c)
    dec = decompose_case(c)
    g = filled_graph(c.n, edges, dec)
    assert brute_chordal(g)
    assert nx.is_chordal(g)
    assert sorted(tuple(sorted(q)) for q in nx.find_cliques(g)) == sorted(dec.cliques)
    assert is_chordal_extension(c.n, edges, dec)


def test_cycle_not_chordal_without_fill():
    g = nx.cycle_graph(5)
    assert not brute_chordal(g)


def test_deterministic():
    c = case("case30")
    assert decompose_case(c) == decompose_case(c)


@pytest.mark.parametrize("name", SMALL + ["case118"])
def test_linking_count_by_enumeration(name):
    dec = decompose_case(case(name))
    cover = {}
    for q in dec.cliques:
        idx = [(v, p) for p in "dq" for v in q]
        for (a, pa), (b, pb) in combinations(idx, 2):
            key = tuple(sorted([(a, pa), (b, pb)]))
            cover[key] = cover.get(key, 0) + 1
        for a, pa in idx:
            cover[((a, pa), (a, pa))] = cover.get(((a, pa), (a, pa)), 0) + 1
    # symmetric entries collapse, so count each unordered real entry once
    expected = sum(k - 1 for k in cover.values())
    assert linking_entry_count(dec) == expected


def test_running_intersection_on_tree():
    dec = decompose_case(case("case118"))
    assert sum(p < 0 for p in dec.parent) == 1
    for v, holders in enumerate(dec.bus_cliques()):
        inside = set(holders)
        roots = [i for i in holders if dec.parent[i] not in inside]
        assert len(roots) == 1, v


def test_merge_reduces_cliques():
    c = case("case118")
    base = decompose_case(c)
    merged = decompose_case(c, merge_threshold=50.0)
    assert merged.m < base.m
    assert is_chordal_extension(c.n, case_edges(c), merged)


def test_pair_entries_and_index():
    assert len(pair_entries(3, 3)) == 3
    assert len(pair_entries(1, 3)) == 4
    q = (2, 5, 9)
    assert local_index(q, 5, "d") == 1
    assert local_index(q, 5, "q") == 4


def test_cliques_json():
    dec = decompose_case(case("case4"))
    d = dec.to_dict(labels=[1, 2, 3, 4])
    assert d["m"] == 2
    assert d["linking_entries"] == linking_entry_count(dec)
    assert max(clique_sizes(dec)) == d["max_clique_size"] == 3


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 12).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=3 * n))))
def test_random_graphs(data):
    n, extra = data
    edges = [(i, i + 1) for i in range(n - 1)] + extra
    dec = chordal_extend(n, edges)
    g = filled_graph(n, [e for e in edges if e[0] != e[1]], dec)
    assert brute_chordal(g)
    assert sorted(tuple(sorted(q)) for q in nx.find_cliques(g)) == sorted(dec.cliques)
    assert is_chordal_extension(n, edges, dec)
