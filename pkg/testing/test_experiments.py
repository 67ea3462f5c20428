#!/usr/bin/env python3
"""Tests for the experiment harness and its written outputs"""

import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from experiments import (CELL_BUILDERS, EXPERIMENT_DEFAULTS, HYPOTHESES, Cell, ExperimentConfig, _reduce,
                         _run_one, half_width, run_experiment, write_report)
from lab_settings import ConfigError, DiscoveryError, ReportError

SMALL = {
    'fcm_vs_k': {'cases': ['linear'], 'ks': {'linear': [1, 3]}, 'n': {'linear': 300}, 'reps': 4},
    'ci_tables': {'structures': ['fork'], 'combinations': ['LL', 'NN'], 'n': 200, 'reps': 2},
    'discovery_4var': {'cases': ['linear'], 'n': 300, 'reps': 2},
    'k_effect': {'ks': [1, 2], 'n': 200, 'reps': 3},
    'pc_prior': {'model': 'collider', 'ci': 'fisher_z', 'n': 200, 'reps': 2},
    'variance_scaling': {'n': 200, 'reps': 2, 'repeats': 2},
}


def _run(name, seed=5, parallel=1, **params):
    return run_experiment(ExperimentConfig(name, {**SMALL[name], **params}, seed, parallel))


# ==============================================
# Config
# ==============================================
def test_every_experiment_has_a_small_config():
    assert set(SMALL) == set(EXPERIMENT_DEFAULTS)


def test_config_merges_defaults():
    config = ExperimentConfig('ci_tables', {'reps': 3}, seed=1)
    assert config.params['reps'] == 3
    assert config.params['combinations'] == ['LL', 'LN', 'NL', 'NN']
    assert config.to_dict() == {'name': 'ci_tables', 'params': config.params, 'seed': 1}


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError, match='unknown experiment'):
        ExperimentConfig('fci_tables')
    with pytest.raises(ConfigError, match='unknown option'):
        ExperimentConfig('ci_tables', {'repetitions': 3})
    for reps in (0, 2.5):
        with pytest.raises(ConfigError):
            ExperimentConfig('ci_tables', {'reps': reps})
    with pytest.raises(ConfigError):
        ExperimentConfig('ci_tables', parallel=0)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({'params': {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.load(tmp_path / 'missing.json')
    with pytest.raises(ConfigError, match='master seed'):
        run_experiment(ExperimentConfig('ci_tables', SMALL['ci_tables']))


def test_load_takes_seed_override(docs_path):
    config = ExperimentConfig.load(docs_path('ci_tables_fork.json'), seed=9, parallel=2)
    assert config.seed == 9 and config.parallel == 2
    assert config.params['structures'] == ['fork']


def test_bad_cell_parameters_are_config_errors():
    with pytest.raises(ConfigError):
        _run('ci_tables', combinations=['LX'])
    with pytest.raises(ConfigError):
        _run('discovery_4var', methods=['fci'])
    with pytest.raises(ConfigError):
        _run('pc_prior', model='chain')


# ==============================================
# Running and reduction
# ==============================================
def test_runs_are_deterministic():
    a = _run('fcm_vs_k')
    b = _run('fcm_vs_k')
    c = _run('fcm_vs_k', seed=6)
    assert a.cells == b.cells
    assert [cell['seeds'] for cell in a.cells] != [cell['seeds'] for cell in c.cells]


def test_parallel_run_writes_identical_files(tmp_path):
    write_report(_run('fcm_vs_k', parallel=1), tmp_path / 'one')
    write_report(_run('fcm_vs_k', parallel=3), tmp_path / 'three')
    for name in ('report.json', 'fcm_vs_k.csv', 'manifest.json'):
        assert (tmp_path / 'one' / name).read_bytes() == (tmp_path / 'three' / name).read_bytes()


def test_fcm_vs_k_cells():
    report = _run('fcm_vs_k')
    assert [cell['cell'] for cell in report.cells] == [{'case': 'linear', 'k': 1}, {'case': 'linear', 'k': 3}]
    for cell in report.cells:
        assert cell['status'] == 'ok'
        accuracy = cell['metrics']['accuracy']
        assert accuracy['kind'] == 'rate'
        assert accuracy['rate'] == accuracy['count'] / 4
        assert len(cell['seeds']) == 4


def test_unexpected_exception_fails_only_its_cell(monkeypatch):
    def broken(seed, rep):
        raise TypeError("'NoneType' object is not iterable")

    def fine(seed, rep):
        return {'accuracy': True}
    monkeypatch.setitem(CELL_BUILDERS, 'fcm_vs_k',
                        lambda p: [Cell({'case': 'broken'}, broken, 2), Cell({'case': 'fine'}, fine, 2)])
    report = _run('fcm_vs_k')
    first, second = report.cells
    assert first['status'] == 'error'
    assert first['error']['code'] == 'TypeError'
    assert first['error']['seed'] == first['seeds'][0]
    assert second['status'] == 'ok'
    assert second['metrics']['accuracy']['rate'] == 1.0


def test_reduce_keeps_the_first_failure():
    def job(seed, rep):
        if rep == 1:
            raise DiscoveryError('boom', code='ZERO_VARIANCE')
        return {'accuracy': True}
    cell = Cell({'case': 'x'}, job, 3)
    outcomes = [_run_one(cell, 100 + rep, rep) for rep in range(3)]
    result = _reduce(cell, [100, 101, 102], outcomes)
    assert result['status'] == 'error'
    assert result['error'] == {'code': 'ZERO_VARIANCE', 'message': 'boom', 'rep': 1, 'seed': 101}
    assert result['metrics'] == {}


def test_reduce_means_for_real_valued_metrics():
    values = iter([0.5, 1.0, 0.0])
    cell = Cell({'case': 'x'}, lambda seed, rep: {'skeleton_f1': next(values)}, 3)
    outcomes = [_run_one(cell, rep, rep) for rep in range(3)]
    metric = _reduce(cell, [0, 1, 2], outcomes)['metrics']['skeleton_f1']
    assert metric['kind'] == 'mean'
    assert metric['rate'] == pytest.approx(0.5)
    assert metric['half_width'] == pytest.approx(1.96 * 0.5 / np.sqrt(3))


def test_half_width():
    assert half_width(0.5, 100) == pytest.approx(1.96 * 0.05)
    assert half_width(1.0, 100) == 0.0


def test_discovery_and_k_effect_metrics():
    for name in ('discovery_4var', 'k_effect'):
        report = _run(name)
        assert len(report.cells) == 4
        for cell in report.cells:
            assert cell['status'] == 'ok'
            assert set(cell['metrics']) == {'accuracy', 'skeleton_f1'}


def test_pc_prior_reports_v_structures():
    report = _run('pc_prior')
    assert [cell['cell']['setting'] for cell in report.cells] == ['disaggregated', 'aggregated',
                                                                  'aggregated_prior']
    assert all('v_structure' in cell['metrics'] for cell in report.cells)


def test_variance_scaling_repeats(tmp_path):
    report = _run('variance_scaling')
    assert 'linear-Gaussian BIC' in report.notes['score']
    for cell in report.cells:
        assert cell['reps'] == 4
        assert len(cell['repeat_rates']) == 2
    write_report(report, tmp_path)
    frame = pd.read_csv(tmp_path / 'variance_scaling.csv')
    assert 'repeat_std' in frame.columns
    assert set(frame['setting']) == {'N_X', 'N_Z'}


# ==============================================
# Writing
# ==============================================
def test_ci_table_layout_and_manifest(tmp_path):
    report = _run('ci_tables')
    manifest = write_report(report, tmp_path)
    frame = pd.read_csv(tmp_path / 'ci_table_fork.csv')
    assert list(frame.columns) == ['f', 'g', *HYPOTHESES, 'reps']
    assert frame[['f', 'g']].values.tolist() == [['linear', 'linear'], ['nonlinear', 'nonlinear']]
    assert frame[list(HYPOTHESES)].stack().between(0, 1).all()

    for entry in manifest['files']:
        digest = hashlib.sha256((tmp_path / entry['path']).read_bytes()).hexdigest()
        assert entry['sha256'] == digest
    assert json.loads((tmp_path / 'manifest.json').read_text()) == manifest
    assert 'wall_clock' not in json.loads((tmp_path / 'report.json').read_text())


def test_error_cells_get_an_error_row(tmp_path):
    doc = {
        'config': {'name': 'fcm_vs_k', 'params': {}, 'seed': 1},
        'cells': [{'cell': {'case': 'linear', 'k': 1}, 'reps': 2, 'seeds': [1, 2], 'status': 'error',
                   'error': {'code': 'NON_FINITE', 'message': 'overflow', 'rep': 0, 'seed': 1}, 'metrics': {}}],
        'notes': {},
    }
    write_report(doc, tmp_path)
    frame = pd.read_csv(tmp_path / 'fcm_vs_k.csv')
    assert frame['metric'].tolist() == ['error']
    assert frame['rate'].isna().all()


def test_unwritable_output_is_a_report_error(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x')
    with pytest.raises(ReportError):
        write_report(_run('fcm_vs_k', reps=1), blocker / 'out')


# ==============================================
# Full-size runs
# ==============================================
def _rates(name, params, reps=100, seed=0):
    params = {**params, 'reps': reps}
    report = run_experiment(ExperimentConfig(name, params, seed=seed, parallel=4))
    assert all(cell['status'] == 'ok' for cell in report.cells)
    return report.cells


def _table(structure, combinations):
    cells = _rates('ci_tables', {'structures': [structure], 'combinations': combinations})
    return {cell['cell']['f'][0].upper() + cell['cell']['g'][0].upper():
            {h: metric['rate'] for h, metric in cell['metrics'].items()} for cell in cells}


@pytest.mark.slow
def test_fork_table_linear_and_nonlinear():
    table = _table('fork', ['LL', 'NN'])
    linear = table['LL']
    for h in ('I', 'II', 'III', 'IV', 'V'):
        assert linear[h] >= 0.95
    for h in ('VI', 'A', 'B'):
        assert 0.01 <= linear[h] <= 0.12
    assert table['NN']['VI'] >= 0.25


@pytest.mark.slow
def test_collider_table_keeps_marginal_independence():
    table = _table('collider', ['LL', 'LN', 'NL', 'NN'])
    for combo, rates in table.items():
        assert 0.01 <= rates['III'] <= 0.12, combo
    assert table['LL']['VI'] >= 0.9


@pytest.mark.slow
def test_chain_table_with_nonlinear_second_link():
    table = _table('chain', ['LL', 'LN'])
    assert 0.01 <= table['LL']['VI'] <= 0.12
    assert table['LN']['B'] >= 0.5
    assert 0.01 <= table['LN']['VI'] <= 0.12


@pytest.mark.slow
def test_lingam_accuracy_falls_to_a_coin_flip():
    params = {'cases': ['linear'], 'ks': {'linear': [1, 2, 50]}}
    rates = {cell['cell']['k']: cell['metrics']['accuracy']['rate'] for cell in _rates('fcm_vs_k', params)}
    assert rates[1] >= 0.95
    assert rates[2] >= 0.95
    assert 0.35 <= rates[50] <= 0.65


@pytest.mark.slow
def test_anm_accuracy_falls_faster():
    params = {'cases': ['nonlinear'], 'ks': {'nonlinear': [1, 10]}}
    rates = {cell['cell']['k']: cell['metrics']['accuracy']['rate'] for cell in _rates('fcm_vs_k', params)}
    assert rates[1] >= 0.85
    assert rates[10] <= 0.65


@pytest.mark.slow
def test_variance_scaling_is_blind_to_squared_mechanisms():
    report = run_experiment(ExperimentConfig('variance_scaling', {'reps': 10, 'repeats': 2}, seed=0, parallel=4))
    assert 'linear-Gaussian BIC' in report.notes['score']
    for cell in report.cells:
        assert cell['status'] == 'ok'
        assert cell['metrics']['accuracy']['rate'] <= 0.1


@pytest.mark.slow
def test_skeleton_prior_recovers_the_v_structure():
    cells = _rates('pc_prior', {'settings': ['aggregated', 'aggregated_prior']}, reps=50)
    rates = {cell['cell']['setting']: cell['metrics'] for cell in cells}
    assert rates['aggregated_prior']['v_structure']['rate'] >= 0.9
    assert rates['aggregated']['accuracy']['rate'] <= 0.6


@pytest.mark.slow
def test_lagged_fork_matches_aligned_fork_at_large_k():
    cells = _rates('k_effect', {'ks': [20]}, reps=50)
    rates = {cell['cell']['model']: cell['metrics']['accuracy']['rate'] for cell in cells}
    assert rates['var'] >= 0.8 and rates['aligned'] >= 0.8
    assert abs(rates['var'] - rates['aligned']) <= 0.10
