#!/usr/bin/env python3
"""Tests for exact enumeration and the chain/fork probability relations"""

import numpy as np
import pandas as pd
import pytest

from exact_oracle import (PROB_COLUMN, JointTable, build_joint_table, check_chain_fork_condition,
                          check_ci_exact, check_corollary_sufficient, classify_structure, joint_quantity,
                          joint_table_to_csv, random_discrete_spec, search_violating_spec, state_space_size)
from lab_settings import OracleError, make_rng
from scm_generators import (IDENTITY, MechanismSpec, NoiseSpec, aligned_spec, fork_model, load_spec, root,
                            scale)

BINARY = NoiseSpec.discrete([0, 1])
TERNARY = NoiseSpec.discrete([-1, 0, 1])


def _binary_fork():
    link = MechanismSpec({'Y': (IDENTITY,)}, IDENTITY, BINARY)
    return aligned_spec({'X': link, 'Y': root(BINARY), 'Z': link}, ('X', 'Y', 'Z'))


def _marginal(joint, name):
    values = joint_quantity(joint, name)[name]
    return joint.frame[PROB_COLUMN].groupby(values.to_numpy()).sum()


# ==============================================
# Enumeration
# ==============================================
def test_single_step_binary_fork_table():
    spec = _binary_fork()
    assert state_space_size(spec, 1) == 8
    joint = build_joint_table(spec, 1)
    assert len(joint.frame) <= 8
    assert joint.frame[PROB_COLUMN].sum() == pytest.approx(1.0, abs=1e-12)
    assert joint.columns == ['X_1', 'Y_1', 'Z_1']
    assert joint.structure == 'fork'


def test_aggregate_marginal_is_the_convolution(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_square_discrete.json')), 2)
    marginal = _marginal(joint, 'S_Y')
    expected = {-2.0: 1 / 9, -1.0: 2 / 9, 0.0: 3 / 9, 1.0: 2 / 9, 2.0: 1 / 9}
    assert marginal.index.tolist() == sorted(expected)
    assert np.allclose(marginal.to_numpy(), [expected[v] for v in sorted(expected)], atol=1e-12)


def test_joint_quantities():
    joint = build_joint_table(_binary_fork(), 2)
    assert list(joint_quantity(joint, 'Y_1:k').columns) == ['Y_1', 'Y_2']
    assert list(joint_quantity(joint, 'X_2').columns) == ['X_2']
    for bad in ('S_Q', 'Y_2:k', 'prob', 'W_1'):
        with pytest.raises(OracleError):
            joint_quantity(joint, bad)


def test_table_must_be_a_distribution():
    frame = pd.DataFrame({'X_1': [0.0, 1.0], PROB_COLUMN: [0.5, 0.4]})
    with pytest.raises(OracleError):
        JointTable(frame, ('X',), 1)
    frame[PROB_COLUMN] = [1.5, -0.5]
    with pytest.raises(OracleError):
        JointTable(frame, ('X',), 1)


def test_state_space_limit():
    with pytest.raises(OracleError) as info:
        build_joint_table(_binary_fork(), 4, max_states=100)
    assert info.value.code == 'STATE_SPACE'


def test_continuous_noise_is_rejected():
    with pytest.raises(OracleError, match='discrete'):
        build_joint_table(fork_model(), 2)


def test_classify_structure(rng):
    for structure in ('chain', 'fork', 'collider'):
        assert classify_structure(random_discrete_spec(rng, structure)) == structure
    with pytest.raises(OracleError):
        random_discrete_spec(rng, 'cycle')


# ==============================================
# Exact CI
# ==============================================
def test_collider_roots_are_marginally_independent(rng):
    joint = build_joint_table(random_discrete_spec(rng, 'collider'), 2)
    check = check_ci_exact(joint, 'S_X', 'S_Z')
    assert check.holds
    assert check.max_deviation < 1e-12
    assert check.query == 'S_X _||_ S_Z | {}'


def test_variable_is_not_independent_of_itself(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_square_discrete.json')), 2)
    assert not check_ci_exact(joint, ['S_X'], ['S_X']).holds


def test_partial_linear_fork_keeps_aggregate_independence(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_partial_linear_discrete.json')), 2)
    check = check_ci_exact(joint, ['S_X'], ['S_Z'], ['S_Y'])
    assert check.holds
    assert check.max_deviation < 1e-12


def test_square_fork_breaks_aggregate_independence(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_square_discrete.json')), 2)
    check = check_ci_exact(joint, 'S_X', 'S_Z', 'S_Y')
    assert not check.holds
    assert check.max_deviation > 1e-4
    # the unaggregated fork still screens off
    assert check_ci_exact(joint, 'X_1,X_2', 'Z_1,Z_2', 'Y_1:k').holds


# ==============================================
# Chain / fork relation
# ==============================================
def test_relation_residuals_on_square_fork(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_square_discrete.json')), 2)
    result = check_chain_fork_condition(joint)
    assert not result.ci_holds
    assert result.condition_ii_residual > 1e-4
    assert result.to_dict()['equivalence_ok']
    assert result.structure == 'fork'


def test_relation_residuals_on_partial_linear_fork(fixture_path):
    joint = build_joint_table(load_spec(fixture_path('fork_partial_linear_discrete.json')), 2)
    result = check_chain_fork_condition(joint)
    assert result.ci_holds
    assert result.condition_ii_residual < 1e-12
    assert result.condition_iii_residual < 1e-12


def test_effect_that_ignores_the_cause_has_zero_residual():
    cut = MechanismSpec({'Y': (scale(0.0),)}, IDENTITY, TERNARY)
    keep = MechanismSpec({'Y': (IDENTITY,)}, IDENTITY, BINARY)
    spec = aligned_spec({'X': keep, 'Y': root(TERNARY), 'Z': cut}, ('X', 'Y', 'Z'))
    result = check_chain_fork_condition(build_joint_table(spec, 2))
    assert result.condition_ii_residual < 1e-12
    assert result.ci_holds


def test_relation_needs_trivariate_layout_and_two_steps():
    with pytest.raises(OracleError):
        check_chain_fork_condition(build_joint_table(_binary_fork(), 1))
    pair = aligned_spec({'X': root(BINARY), 'Y': MechanismSpec({'X': (IDENTITY,)}, IDENTITY, BINARY)},
                        ('X', 'Y'))
    with pytest.raises(OracleError):
        check_chain_fork_condition(build_joint_table(pair, 2))


@pytest.mark.parametrize('structure', ['chain', 'fork'])
def test_relation_matches_exact_ci_on_random_specs(structure):
    rng = make_rng(7, 'random-specs', structure)
    for _ in range(50):
        joint = build_joint_table(random_discrete_spec(rng, structure), 2)
        result = check_chain_fork_condition(joint)
        assert result.details['equivalence_ok']
        assert check_corollary_sufficient(joint).implication_ok


def test_collider_layout_is_reported_not_raised(rng):
    joint = build_joint_table(random_discrete_spec(rng, 'collider'), 2)
    assert check_chain_fork_condition(joint).structure == 'collider'


# ==============================================
# Corollary and helpers
# ==============================================
def test_corollary_on_fixtures(fixture_path):
    square = check_corollary_sufficient(build_joint_table(load_spec(fixture_path('fork_square_discrete.json')), 2))
    assert (square.A_holds, square.B_holds, square.VI_holds) == (False, False, False)
    assert square.implication_ok

    partial = build_joint_table(load_spec(fixture_path('fork_partial_linear_discrete.json')), 2)
    result = check_corollary_sufficient(partial)
    assert result.B_holds and result.VI_holds and result.implication_ok


def test_search_finds_a_violating_fork():
    spec, ci = search_violating_spec(3, 'fork')
    assert ci.max_deviation > 1e-4
    again, _ = search_violating_spec(3, 'fork')
    assert again == spec


def test_joint_table_csv(tmp_path):
    joint = build_joint_table(_binary_fork(), 2)
    path = tmp_path / 'joint.csv'
    joint_table_to_csv(joint, path)
    back = pd.read_csv(path, float_precision='round_trip')
    assert list(back.columns) == ['X_1', 'X_2', 'Y_1', 'Y_2', 'Z_1', 'Z_2', PROB_COLUMN]
    assert back[PROB_COLUMN].sum() == pytest.approx(1.0, abs=1e-12)
    assert len(back) == len(joint.frame)
