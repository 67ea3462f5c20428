#!/usr/bin/env python3
"""
Causal Graphs
DAG and CPDAG containers, the CPDAG construction (v-structures + Meek rules),
Markov-equivalence comparison, exhaustive DAG enumeration and the JSON /
edge-text formats used in reports.
"""

import heapq
import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import networkx as nx

from lab_settings import DiscoveryError


def edge_key(a, b):
    """Undirected edge key, independent of argument order"""
    return frozenset((a, b))


@dataclass(frozen=True)
class Dag:
    """Node names plus a directed edge set"""
    nodes: tuple
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'edges', frozenset(tuple(e) for e in self.edges))

    def to_networkx(self):
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def violations(self):
        """Invariant violations as short strings (empty when valid)"""
        found = []
        names = set(self.nodes)
        if len(names) != len(self.nodes):
            found.append("duplicate node")
        for a, b in sorted(self.edges):
            if a == b:
                found.append(f"self-loop on {a}")
            if a not in names or b not in names:
                found.append(f"edge {a}->{b} references unknown node")
        if not found and not nx.is_directed_acyclic_graph(self.to_networkx()):
            found.append("cycle")
        return found

    def parents(self, node):
        return tuple(a for a in self.nodes if (a, node) in self.edges)

    def adjacent(self, a, b):
        return (a, b) in self.edges or (b, a) in self.edges

    def topological_order(self):
        """Topological order, ties broken by declaration order"""
        index = {v: i for i, v in enumerate(self.nodes)}
        return tuple(nx.lexicographical_topological_sort(self.to_networkx(), key=index.get))

    def v_structures(self):
        found = set()
        for c in self.nodes:
            for a, b in itertools.combinations(self.parents(c), 2):
                if not self.adjacent(a, b):
                    found.add((a, c, b))
        return found


@dataclass(frozen=True)
class Cpdag:
    """Node names, directed edges and undirected edges (disjoint)"""
    nodes: tuple
    directed: frozenset = field(default_factory=frozenset)
    undirected: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, 'nodes', tuple(self.nodes))
        object.__setattr__(self, 'directed', frozenset(tuple(e) for e in self.directed))
        object.__setattr__(self, 'undirected', frozenset(edge_key(*e) for e in self.undirected))
        for a, b in self.directed:
            if edge_key(a, b) in self.undirected:
                raise DiscoveryError(f"edge {a}-{b} is both directed and undirected")

    def adjacent(self, a, b):
        return (a, b) in self.directed or (b, a) in self.directed or edge_key(a, b) in self.undirected

    def skeleton(self):
        return frozenset(edge_key(a, b) for a, b in self.directed) | self.undirected

    def _ordered(self, pair):
        index = {v: i for i, v in enumerate(self.nodes)}
        return sorted(pair, key=index.get)

    def to_dict(self):
        return {
            'nodes': list(self.nodes),
            'directed': sorted([a, b] for a, b in self.directed),
            'undirected': sorted(self._ordered(p) for p in self.undirected),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(doc['nodes'], [tuple(e) for e in doc.get('directed', [])],
                   [tuple(e) for e in doc.get('undirected', [])])

    def to_text(self):
        """One-line edge list, e.g. `X->Y; A--B`"""
        parts = [f"{a}->{b}" for a, b in sorted(self.directed)]
        parts += [f"{a}--{b}" for a, b in sorted(self._ordered(p) for p in self.undirected)]
        return '; '.join(parts)


# ==============================================
# Orientation
# ==============================================
def apply_meek_rules(nodes, directed, undirected):
    """Close a PDAG under Meek rules R1-R3; returns (directed, undirected) sets"""
    directed = set(directed)
    undirected = set(edge_key(*e) for e in undirected)

    def adj(a, b):
        return (a, b) in directed or (b, a) in directed or edge_key(a, b) in undirected

    def orient(a, b):
        undirected.discard(edge_key(a, b))
        directed.add((a, b))

    changed = True
    while changed:
        changed = False
        for edge in sorted(undirected, key=lambda p: sorted(p)):
            a, b = sorted(edge)
            for x, y in ((a, b), (b, a)):
                if edge_key(x, y) not in undirected:
                    break
                # R1: w -> x -- y, w and y nonadjacent
                r1 = any((w, x) in directed and not adj(w, y) for w in nodes if w not in (x, y))
                # R2: x -> w -> y with x -- y
                r2 = any((x, w) in directed and (w, y) in directed for w in nodes if w not in (x, y))
                # R3: x -- c -> y, x -- d -> y, c and d nonadjacent
                kites = [c for c in nodes if c not in (x, y)
                         and edge_key(x, c) in undirected and (c, y) in directed]
                r3 = any(not adj(c, d) for c, d in itertools.combinations(kites, 2))
                if r1 or r2 or r3:
                    orient(x, y)
                    changed = True
                    break
    return directed, undirected


def dag_to_cpdag(dag):
    """CPDAG of the DAG's Markov equivalence class"""
    compelled = set()
    for a, c, b in dag.v_structures():
        compelled.add((a, c))
        compelled.add((b, c))
    rest = [e for e in dag.edges if e not in compelled]
    directed, undirected = apply_meek_rules(dag.nodes, compelled, rest)
    return Cpdag(dag.nodes, directed, undirected)


def same_mec(a, b):
    """Exact CPDAG match (the accuracy metric)"""
    if set(a.nodes) != set(b.nodes):
        raise DiscoveryError(f"node sets differ: {sorted(a.nodes)} vs {sorted(b.nodes)}")
    return a.directed == b.directed and a.undirected == b.undirected


def skeleton_f1(estimate, truth):
    """F1 score of the estimated skeleton against the true one"""
    est, ref = estimate.skeleton(), truth.skeleton()
    if not est and not ref:
        return 1.0
    tp = len(est & ref)
    if tp == 0:
        return 0.0
    precision, recall = tp / len(est), tp / len(ref)
    return 2 * precision * recall / (precision + recall)


# ==============================================
# Enumeration
# ==============================================
def _smallest_topological_order(s, edges):
    indegree = [0] * s
    children = [[] for _ in range(s)]
    for a, b in edges:
        indegree[b] += 1
        children[a].append(b)
    ready = [v for v in range(s) if indegree[v] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        v = heapq.heappop(ready)
        order.append(v)
        for c in children[v]:
            indegree[c] -= 1
            if indegree[c] == 0:
                heapq.heappush(ready, c)
    return tuple(order)


@lru_cache(maxsize=None)
def dag_edge_sets(s):
    """All DAGs on s labelled nodes as sorted index-edge tuples.

    Each DAG is produced exactly once: from the permutation that is its
    lexicographically smallest topological order.
    """
    result = []
    for perm in itertools.permutations(range(s)):
        slots = [(perm[j], perm[i]) for i in range(s) for j in range(i)]
        for mask in range(1 << len(slots)):
            edges = [slots[bit] for bit in range(len(slots)) if mask >> bit & 1]
            if _smallest_topological_order(s, edges) == perm:
                result.append(tuple(sorted(edges)))
    result.sort(key=lambda e: (len(e), e))
    return tuple(result)


def enumerate_dags(nodes):
    nodes = tuple(nodes)
    return [Dag(nodes, [(nodes[a], nodes[b]) for a, b in edges])
            for edges in dag_edge_sets(len(nodes))]
