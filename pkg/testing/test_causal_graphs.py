#!/usr/bin/env python3
"""Tests for DAG / CPDAG handling and DAG enumeration"""

import pytest

from causal_graphs import (Cpdag, Dag, dag_edge_sets, dag_to_cpdag, edge_key, enumerate_dags, same_mec,
                           skeleton_f1)
from lab_settings import DiscoveryError

NODES = ('X', 'Y', 'Z')


def test_chain_cpdag_is_fully_undirected():
    cpdag = dag_to_cpdag(Dag(NODES, [('X', 'Y'), ('Y', 'Z')]))
    assert cpdag.directed == frozenset()
    assert cpdag.undirected == {edge_key('X', 'Y'), edge_key('Y', 'Z')}


def test_collider_edges_are_compelled():
    cpdag = dag_to_cpdag(Dag(NODES, [('X', 'Y'), ('Z', 'Y')]))
    assert cpdag.directed == {('X', 'Y'), ('Z', 'Y')}
    assert not cpdag.undirected


def test_meek_rule_one_orients_downstream_edge():
    dag = Dag(('X', 'Y', 'Z', 'H'), [('X', 'Z'), ('Y', 'Z'), ('Z', 'H')])
    cpdag = dag_to_cpdag(dag)
    assert cpdag.directed == {('X', 'Z'), ('Y', 'Z'), ('Z', 'H')}


def test_chain_and_fork_share_an_equivalence_class():
    chain = dag_to_cpdag(Dag(NODES, [('X', 'Y'), ('Y', 'Z')]))
    fork = dag_to_cpdag(Dag(NODES, [('Y', 'X'), ('Y', 'Z')]))
    collider = dag_to_cpdag(Dag(NODES, [('X', 'Y'), ('Z', 'Y')]))
    assert same_mec(chain, fork)
    assert not same_mec(chain, collider)


def test_same_mec_needs_matching_nodes():
    with pytest.raises(DiscoveryError):
        same_mec(Cpdag(('X', 'Y')), Cpdag(('X', 'Z')))


def test_cycle_and_self_loop_are_reported():
    assert Dag(('X', 'Y'), [('X', 'Y'), ('Y', 'X')]).violations() == ['cycle']
    assert 'self-loop on X' in Dag(('X',), [('X', 'X')]).violations()


def test_topological_order_breaks_ties_by_declaration():
    dag = Dag(('Z', 'X', 'Y'), [('X', 'Y')])
    assert dag.topological_order() == ('Z', 'X', 'Y')


def test_cpdag_text_and_dict_formats():
    cpdag = Cpdag(NODES, [('X', 'Y')], [('Z', 'Y')])
    assert cpdag.to_text() == 'X->Y; Y--Z'
    assert Cpdag.from_dict(cpdag.to_dict()) == cpdag


def test_cpdag_rejects_an_edge_that_is_both_kinds():
    with pytest.raises(DiscoveryError):
        Cpdag(NODES, [('X', 'Y')], [('X', 'Y')])


def test_skeleton_f1():
    truth = Cpdag(NODES, [], [('X', 'Y'), ('Y', 'Z')])
    assert skeleton_f1(truth, truth) == 1.0
    assert skeleton_f1(Cpdag(NODES, [('X', 'Y')]), truth) == pytest.approx(2 / 3)
    assert skeleton_f1(Cpdag(NODES), truth) == 0.0
    assert skeleton_f1(Cpdag(NODES), Cpdag(NODES)) == 1.0


def test_dag_counts_for_three_and_four_nodes():
    assert len(dag_edge_sets(3)) == 25
    assert len(dag_edge_sets(4)) == 543
    assert len(set(dag_edge_sets(4))) == 543


def test_enumeration_starts_with_the_empty_graph():
    dags = enumerate_dags(NODES)
    assert dags[0].edges == frozenset()
    assert all(not d.violations() for d in dags)


@pytest.mark.slow
def test_dag_count_for_five_nodes():
    assert len(dag_edge_sets(5)) == 29281
