"""Chordal extension, maximal cliques and the clique tree of a bus graph.

The extension comes from symbolic elimination under a minimum-degree
ordering.  Degree ties are broken towards the highest bus index, which on a
four-bus ring ``1-2-3-4-1`` eliminates bus 4 first and adds the chord
``1-3``.  Maximal cliques are read off the elimination candidate sets and
joined into a clique tree by a maximum-weight spanning tree over separator
sizes.

Each clique of ``b`` buses owns a ``2b x 2b`` real block ordered as the
``d`` parts then the ``q`` parts of its buses, in ascending bus order.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
from itertools import combinations

import numpy as np

from .errors import DisconnectedGraph


@dataclasses.dataclass(frozen=True)
class CliqueDecomposition:
    """Cliques of a chordal extension of an ``n``-vertex graph.

    Attributes
    ----------
    cliques : tuple of tuple of int
        Sorted 0-based vertex sets, ordered lexicographically.
    fill_edges : tuple of (int, int)
        Edges added by the extension (``a < b``).
    parent : tuple of int
        Clique-tree parent of each clique, ``-1`` at the root (clique 0).
    order : tuple of int
        Elimination order.
    """

    n: int
    cliques: tuple[tuple[int, ...], ...]
    fill_edges: tuple[tuple[int, int], ...]
    parent: tuple[int, ...]
    order: tuple[int, ...] = ()

    @property
    def m(self) -> int:
        return len(self.cliques)

    def separator(self, i: int) -> tuple[int, ...]:
        p = self.parent[i]
        if p < 0:
            return ()
        return tuple(sorted(set(self.cliques[i]) & set(self.cliques[p])))

    def tree_edges(self) -> list[tuple[int, int]]:
        return [(i, p) for i, p in enumerate(self.parent) if p >= 0]

    def bus_cliques(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.n)]
        for i, c in enumerate(self.cliques):
            for v in c:
                out[v].append(i)
        return out

    def pair_cliques(self) -> dict[tuple[int, int], list[int]]:
        """Cliques containing each unordered vertex pair ``(a, b)``, ``a <= b``."""
        out: dict[tuple[int, int], list[int]] = {}
        for i, c in enumerate(self.cliques):
            for a in c:
                out.setdefault((a, a), []).append(i)
            for a, b in combinations(c, 2):
                out.setdefault((a, b), []).append(i)
        return out

    def first_clique_with(self, a: int, b: int) -> int:
        """Lowest-index clique containing both vertices."""
        for i, c in enumerate(self.cliques):
            if a in c and b in c:
                return i
        raise KeyError((a, b))

    def block_sizes(self) -> list[int]:
        return [2 * len(c) for c in self.cliques]

    def to_dict(self, labels=None) -> dict:
        lab = (lambda v: int(labels[v])) if labels is not None else (lambda v: int(v))
        pairs = linking_pairs(self)
        return {
            "format": "opfbound.cliques",
            "version": 1,
            "n": self.n,
            "m": self.m,
            "cliques": [[lab(v) for v in c] for c in self.cliques],
            "fill_edges": [[lab(a), lab(b)] for a, b in self.fill_edges],
            "parent": list(self.parent),
            "separators": [[lab(v) for v in self.separator(i)] for i in range(self.m)],
            "linking_pairs": len(pairs),
            "linking_entries": linking_entry_count(self),
            "max_clique_size": max(len(c) for c in self.cliques),
        }

    def to_json(self, labels=None) -> str:
        return json.dumps(self.to_dict(labels), indent=1)


def _check_connected(n: int, adj: list[set[int]]) -> None:
    if n == 0:
        raise DisconnectedGraph("empty graph")
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    if len(seen) != n:
        raise DisconnectedGraph(f"graph has {n - len(seen)} vertices unreachable from vertex 0")


def _min_degree_elimination(n: int, adj: list[set[int]]):
    g = [set(a) for a in adj]
    alive = set(range(n))
    # heap keyed on (degree, -index) so ties go to the highest index
    heap = [(len(g[v]), -v) for v in range(n)]
    heapq.heapify(heap)
    order, candidates, fill = [], [], []
    while heap:
        d, negv = heapq.heappop(heap)
        v = -negv
        if v not in alive or d != len(g[v]):
            continue
        nb = sorted(g[v])
        candidates.append(tuple(sorted([v, *nb])))
        for a, b in combinations(nb, 2):
            if b not in g[a]:
                g[a].add(b)
                g[b].add(a)
                fill.append((a, b))
        for w in nb:
            g[w].discard(v)
        alive.discard(v)
        g[v] = set()
        order.append(v)
        for w in nb:
            heapq.heappush(heap, (len(g[w]), -w))
    return order, candidates, fill


def _maximal(sets: list[tuple[int, ...]]) -> list[tuple[int, ...]]:
    uniq = sorted(set(sets), key=lambda s: (-len(s), s))
    kept: list[tuple[int, ...]] = []
    kept_sets: list[set[int]] = []
    for s in uniq:
        ss = set(s)
        if not any(ss <= k for k in kept_sets):
            kept.append(s)
            kept_sets.append(ss)
    return sorted(kept)


def _clique_tree(cliques: list[tuple[int, ...]]) -> tuple[int, ...]:
    """Parent links of a maximum-weight spanning tree, rooted at clique 0."""
    m = len(cliques)
    sets = [set(c) for c in cliques]
    edges = []
    for i in range(m):
        for j in range(i + 1, m):
            w = len(sets[i] & sets[j])
            if w:
                edges.append((-w, i, j))
    edges.sort()
    root = list(range(m))

    def find(a):
        while root[a] != a:
            root[a] = root[root[a]]
            a = root[a]
        return a

    adj: list[list[int]] = [[] for _ in range(m)]
    for _, i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            root[ri] = rj
            adj[i].append(j)
            adj[j].append(i)
    parent = [-1] * m
    seen = {0}
    queue = [0]
    while queue:
        v = queue.pop(0)
        for w in sorted(adj[v]):
            if w not in seen:
                seen.add(w)
                parent[w] = v
                queue.append(w)
    if len(seen) != m:
        raise DisconnectedGraph("clique intersection graph is disconnected")
    return tuple(parent)


def _block_cost(b: int) -> int:
    """Free entries of a symmetric ``2b x 2b`` block."""
    return 2 * b * (2 * b + 1) // 2


def _merge(cliques: list[tuple[int, ...]], threshold: float) -> list[tuple[int, ...]]:
    """Greedily merge clique-tree neighbours while the merge cost is <= threshold.

    The cost of merging ``Ci`` and ``Cj`` with separator ``S`` is the change
    in block entries plus the linking entries that disappear, i.e.
    ``t(|Ci u Cj|) - t(|Ci|) - t(|Cj|) + t(|S|)``.
    """
    cliques = list(cliques)
    while len(cliques) > 1:
        parent = _clique_tree(cliques)
        best = None
        for i, p in enumerate(parent):
            if p < 0:
                continue
            ci, cp = set(cliques[i]), set(cliques[p])
            cost = _block_cost(len(ci | cp)) - _block_cost(len(ci)) - _block_cost(len(cp)) + _block_cost(len(ci & cp))
            key = (cost, min(i, p), max(i, p))
            if best is None or key < best[0]:
                best = (key, i, p)
        if best is None or best[0][0] > threshold:
            break
        _, i, p = best
        merged = tuple(sorted(set(cliques[i]) | set(cliques[p])))
        cliques = _maximal([c for k, c in enumerate(cliques) if k not in (i, p)] + [merged])
    return cliques


def chordal_extend(n: int, edges, merge_threshold: float | None = None) -> CliqueDecomposition:
    """Chordal extension and clique tree of a connected graph on ``0..n-1``.

    Parameters
    ----------
    n : int
        Vertex count.
    edges : iterable of (int, int)
        Undirected edges; parallel edges and orientation are ignored.
    merge_threshold : float, optional
        When given, adjacent cliques are merged while the merge cost is at
        most this value.

    Raises
    ------
    DisconnectedGraph
    """
    adj: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        a, b = int(a), int(b)
        if a == b:
            continue
        adj[a].add(b)
        adj[b].add(a)
    _check_connected(n, adj)
    if n == 1:
        return CliqueDecomposition(1, ((0,),), (), (-1,), (0,))
    order, candidates, _ = _min_degree_elimination(n, adj)
    cliques = _maximal(candidates)
    if merge_threshold is not None:
        cliques = _merge(cliques, merge_threshold)
    parent = _clique_tree(cliques)
    # fill edges: every clique pair not present in the original graph
    covered = set()
    for c in cliques:
        covered.update(combinations(c, 2))
    fill_edges = tuple(sorted((a, b) for a, b in covered if b not in adj[a]))
    return CliqueDecomposition(n, tuple(cliques), fill_edges, parent, tuple(order))


def decompose_case(case, merge_threshold: float | None = None) -> CliqueDecomposition:
    f, t = case.branch_ends()
    return chordal_extend(case.n, zip(f.tolist(), t.tolist()), merge_threshold)


def linking_pairs(dec: CliqueDecomposition) -> list[tuple[int, int, int, int]]:
    """``(child, parent, a, b)`` for every tree edge and vertex pair ``a <= b`` in its separator.

    With the running-intersection property the cliques holding a pair form
    a subtree, so each pair is linked exactly ``multiplicity - 1`` times.
    """
    out = []
    for i, p in dec.tree_edges():
        sep = dec.separator(i)
        for a in sep:
            out.append((i, p, a, a))
        for a, b in combinations(sep, 2):
            out.append((i, p, a, b))
    return out


def pair_entries(a: int, b: int) -> list[tuple[str, str]]:
    """Distinct real entries tied to bus pair ``(a, b)`` in the d/q embedding."""
    if a == b:
        return [("d", "d"), ("q", "q"), ("d", "q")]
    return [("d", "d"), ("q", "q"), ("d", "q"), ("q", "d")]


def linking_entry_count(dec: CliqueDecomposition) -> int:
    return sum(len(pair_entries(a, b)) for _, _, a, b in linking_pairs(dec))


def local_index(clique: tuple[int, ...], bus: int, part: str) -> int:
    """Row of ``(bus, part)`` inside the real block of ``clique``."""
    pos = clique.index(bus)
    return pos if part == "d" else len(clique) + pos


def is_chordal_extension(n: int, edges, dec: CliqueDecomposition) -> bool:
    """Cheap structural checks: edge coverage, maximality, running intersection."""
    sets = [set(c) for c in dec.cliques]
    for a, b in edges:
        if a != b and not any(a in s and b in s for s in sets):
            return False
    for i, s in enumerate(sets):
        if any(i != j and s <= t for j, t in enumerate(sets)):
            return False
    # running intersection: cliques holding a vertex form a connected subtree
    for v in range(n):
        holders = [i for i, s in enumerate(sets) if v in s]
        if not holders:
            return False
        roots = [i for i in holders if dec.parent[i] < 0 or v not in sets[dec.parent[i]]]
        if len(roots) != 1:
            return False
    return True


def clique_sizes(dec: CliqueDecomposition) -> np.ndarray:
    return np.array([len(c) for c in dec.cliques])
