#!/usr/bin/env python3
"""
Experiment Harness
Config-driven Monte Carlo runs: every experiment is a list of cells, every
cell runs its repetitions on derived seeds, and the reduced rates (with
half-widths) are written as JSON, CSV and a hashed manifest.
"""

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from aggregation import NormalizationSpec, aggregate_panel, aggregate_series, panel_slice
from causal_graphs import dag_to_cpdag, same_mec, skeleton_f1
from discovery import anm_direction, direct_lingam_direction, pc_discover, score_search
from lab_settings import (DEFAULT_ALPHA, HALF_WIDTH_Z, ConfigError, LabError, ReportError, derive_seed,
                          make_rng, merge_options)
from scm_generators import (STRUCTURES, BasicFunction, aligned_fork_model, bivariate_model, collider_model,
                            four_variable_model, sample_pnl_pair, simulate_aligned,
                            simulate_var, var_fork_model)
from stat_tests import kci_test

log = logging.getLogger(__name__)

# Per-experiment defaults; a config's params are merged over these
EXPERIMENT_DEFAULTS = {
    'discovery_4var': {
        'cases': ['linear', 'nonlinear'],
        'methods': ['pc', 'score'],
        'ci': {'linear': 'fisher_z', 'nonlinear': 'kci'},
        'k': 2,
        'n': 500,
        'reps': 100,
        'alpha': DEFAULT_ALPHA,
        'norm': 'one',
    },
    'fcm_vs_k': {
        'cases': ['linear', 'nonlinear'],
        'ks': {'linear': [1, 2, 3, 5, 10, 20, 30, 50], 'nonlinear': [1, 2, 3, 4, 5, 6, 8, 10]},
        'n': {'linear': 10000, 'nonlinear': 500},
        'reps': 100,
        'norm': 'one',
    },
    'ci_tables': {
        'structures': ['chain', 'fork', 'collider'],
        'combinations': ['LL', 'LN', 'NL', 'NN'],
        'k': 2,
        'n': 1000,
        'reps': 100,
        'alpha': DEFAULT_ALPHA,
        'kci': {},
    },
    'k_effect': {
        'models': ['var', 'aligned'],
        'ks': [1, 2, 5, 10, 20, 50],
        'n': 500,
        'reps': 100,
        'a': 0.2,
        'b': 0.5,
        'burn_in': 100,
        'norm': 'sqrt_k',
    },
    'pc_prior': {
        'model': 'four_var',
        'settings': ['disaggregated', 'aggregated', 'aggregated_prior'],
        'k': 2,
        'n': 500,
        'reps': 100,
        'alpha': DEFAULT_ALPHA,
        'ci': 'kci',
    },
    'variance_scaling': {
        'settings': ['N_X', 'N_Z'],
        'variance': 4.0,
        'k': 2,
        'n': 500,
        'reps': 50,
        'repeats': 5,
    },
}

HYPOTHESES = {
    'I': ('X', 'Y', ()),
    'II': ('Y', 'Z', ()),
    'III': ('X', 'Z', ()),
    'IV': ('X', 'Y', ('Z',)),
    'V': ('Y', 'Z', ('X',)),
    'VI': ('X', 'Z', ('Y',)),
    'A': ('X', 'Y1', ('Y',)),
    'B': ('Z', 'Y1', ('Y',)),
}

LINK_NAMES = {'L': 'linear', 'N': 'nonlinear'}


@dataclass
class ExperimentConfig:
    name: str
    params: dict = field(default_factory=dict)
    seed: int = None
    parallel: int = 1

    def __post_init__(self):
        if self.name not in EXPERIMENT_DEFAULTS:
            raise ConfigError(f"unknown experiment '{self.name}' "
                              f"(expected one of {', '.join(EXPERIMENT_DEFAULTS)})")
        self.params = merge_options(EXPERIMENT_DEFAULTS[self.name], self.params, self.name)
        reps = self.params['reps']
        if not isinstance(reps, int) or reps < 1:
            raise ConfigError(f"{self.name}: reps must be a positive integer, got {reps!r}")
        if self.parallel < 1:
            raise ConfigError(f"parallel must be at least 1, got {self.parallel}")

    @classmethod
    def from_dict(cls, doc, seed=None, parallel=None):
        if 'name' not in doc:
            raise ConfigError("experiment config needs a 'name'")
        return cls(doc['name'], dict(doc.get('params', {})),
                   seed if seed is not None else doc.get('seed'),
                   parallel if parallel is not None else doc.get('parallel', 1))

    @classmethod
    def load(cls, path, seed=None, parallel=None):
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"{path}: {e}")
        return cls.from_dict(doc, seed, parallel)

    def to_dict(self):
        return {'name': self.name, 'params': self.params, 'seed': self.seed}


@dataclass
class Cell:
    ids: dict
    job: object          # job(seed, rep) -> {metric: bool | float}
    reps: int

    @property
    def key(self):
        return '/'.join(f"{k}={v}" for k, v in self.ids.items())


@dataclass
class ExperimentReport:
    config: dict
    cells: list
    wall_clock: float = 0.0
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {'config': self.config, 'cells': self.cells, 'wall_clock': self.wall_clock, 'notes': self.notes}


# ==============================================
# Shared steps
# ==============================================
def _norm(kind):
    return NormalizationSpec(kind)


def _discovery_metrics(estimate, truth):
    return {'accuracy': same_mec(estimate, truth), 'skeleton_f1': skeleton_f1(estimate, truth)}


def _v_structures(cpdag):
    found = set()
    for a, c in cpdag.directed:
        for b, d in cpdag.directed:
            if d == c and a < b and not cpdag.adjacent(a, b):
                found.add((a, c, b))
    return found


def _aggregated(spec, k, n, seed, norm):
    return aggregate_panel(simulate_aligned(spec, k, n, seed), norm)


# ==============================================
# Cell builders
# ==============================================
def _discovery_4var_cells(p):
    cells = []
    for case in p['cases']:
        spec = four_variable_model(case)
        truth = dag_to_cpdag(spec.instantaneous_dag)
        for method in p['methods']:
            if method not in ('pc', 'score'):
                raise ConfigError(f"unknown discovery method '{method}'")
            for data_kind, k in (('disaggregated', 1), ('aggregated', p['k'])):
                def job(seed, rep, spec=spec, truth=truth, method=method, k=k, case=case):
                    data = _aggregated(spec, k, p['n'], seed, _norm(p['norm']))
                    if method == 'pc':
                        estimate = pc_discover(data, p['ci'][case], p['alpha'])
                    else:
                        estimate = score_search(data)
                    return _discovery_metrics(estimate, truth)
                cells.append(Cell({'case': case, 'method': method, 'data': data_kind}, job, p['reps']))
    return cells


def _fcm_vs_k_cells(p):
    cells = []
    for case in p['cases']:
        spec = bivariate_model(case)
        method = direct_lingam_direction if case == 'linear' else anm_direction
        for k in p['ks'][case]:
            def job(seed, rep, spec=spec, method=method, k=k, case=case):
                data = _aggregated(spec, k, p['n'][case], seed, _norm(p['norm']))
                verdict = method(data.column('X'), data.column('Y'))
                return {'accuracy': verdict.direction == 'x_to_y'}
            cells.append(Cell({'case': case, 'k': k}, job, p['reps']))
    return cells


def _ci_tables_cells(p):
    cells = []
    for structure in p['structures']:
        if structure not in STRUCTURES:
            raise ConfigError(f"unknown structure '{structure}'")
        for combo in p['combinations']:
            if len(combo) != 2 or any(c not in LINK_NAMES for c in combo):
                raise ConfigError(f"combination '{combo}' must be two of L/N")

            def job(seed, rep, structure=structure, combo=combo):
                rng = make_rng(seed, 'pnl')
                f = None if combo[0] == 'L' else sample_pnl_pair(rng)
                g = None if combo[1] == 'L' else sample_pnl_pair(rng)
                panel = simulate_aligned(STRUCTURES[structure](f, g), p['k'], p['n'], seed)
                first = panel_slice(panel, 1, suffix='1')
                data = aggregate_panel(panel).with_columns({'Y1': first.column('Y1')})
                return {h: kci_test(data, a, b, cond, p['alpha'], p['kci']).reject
                        for h, (a, b, cond) in HYPOTHESES.items()}
            ids = {'structure': structure, 'f': LINK_NAMES[combo[0]], 'g': LINK_NAMES[combo[1]]}
            cells.append(Cell(ids, job, p['reps']))
    return cells


def _k_effect_cells(p):
    var_spec = var_fork_model(p['a'], p['b'], p['burn_in'])
    aligned = aligned_fork_model(p['a'], p['b'])
    truth = dag_to_cpdag(aligned.instantaneous_dag)
    cells = []
    for model in p['models']:
        for k in p['ks']:
            def job(seed, rep, model=model, k=k):
                if model == 'var':
                    series = simulate_var(var_spec, p['n'] * k, seed)
                    data = aggregate_series(series, k, _norm(p['norm']), var_spec.variables)
                elif model == 'aligned':
                    data = _aggregated(aligned, k, p['n'], seed, _norm(p['norm']))
                else:
                    raise ConfigError(f"unknown k_effect model '{model}'")
                return _discovery_metrics(score_search(data), truth)
            cells.append(Cell({'model': model, 'k': k}, job, p['reps']))
    return cells


def _pc_prior_spec(model):
    if model == 'four_var':
        return four_variable_model('nonlinear')
    if model == 'collider':
        square = BasicFunction('square')
        return collider_model((square,), (square,))
    raise ConfigError(f"unknown pc_prior model '{model}'")


def _pc_prior_cells(p):
    spec = _pc_prior_spec(p['model'])
    truth = dag_to_cpdag(spec.instantaneous_dag)
    prior = sorted(spec.instantaneous_dag.edges)
    cells = []
    for setting in p['settings']:
        if setting not in ('disaggregated', 'aggregated', 'aggregated_prior'):
            raise ConfigError(f"unknown pc_prior setting '{setting}'")

        def job(seed, rep, setting=setting):
            k = 1 if setting == 'disaggregated' else p['k']
            data = _aggregated(spec, k, p['n'], seed, _norm('one'))
            opts = {'skeleton_prior': prior} if setting == 'aggregated_prior' else None
            estimate = pc_discover(data, p['ci'], p['alpha'], opts)
            metrics = _discovery_metrics(estimate, truth)
            metrics['v_structure'] = _v_structures(estimate) == _v_structures(truth)
            return metrics
        cells.append(Cell({'model': p['model'], 'setting': setting}, job, p['reps']))
    return cells


def _variance_scaling_cells(p):
    cells = []
    for setting in p['settings']:
        if setting not in ('N_X', 'N_Z'):
            raise ConfigError(f"unknown variance_scaling setting '{setting}'")
        spec = four_variable_model('nonlinear', {setting[2:]: p['variance']})
        truth = dag_to_cpdag(spec.instantaneous_dag)
        for data_kind, k in (('disaggregated', 1), ('aggregated', p['k'])):
            def job(seed, rep, spec=spec, truth=truth, k=k):
                data = _aggregated(spec, k, p['n'], seed, _norm('one'))
                return {'accuracy': same_mec(score_search(data), truth)}
            cells.append(Cell({'setting': setting, 'data': data_kind}, job, p['reps'] * p['repeats']))
    return cells


CELL_BUILDERS = {
    'discovery_4var': _discovery_4var_cells,
    'fcm_vs_k': _fcm_vs_k_cells,
    'ci_tables': _ci_tables_cells,
    'k_effect': _k_effect_cells,
    'pc_prior': _pc_prior_cells,
    'variance_scaling': _variance_scaling_cells,
}

NOTES = {
    'accuracy': 'exact CPDAG match (same_mec) or fraction of x_to_y verdicts',
    'half_width': f"{HALF_WIDTH_Z} * sqrt(p (1 - p) / R) for rates, {HALF_WIDTH_Z} * sd / sqrt(R) for means",
}

VARIANCE_SCALING_NOTE = (
    'score_search uses the linear-Gaussian BIC; with zero-mean causes the squared '
    'mechanisms into Z are uncorrelated with X and Y, so the X-Z and Y-Z edges are '
    'invisible to it and accuracy stays near 0 with or without aggregation. A '
    'nonlinear (cross-validated kernel) score is needed to see the drop from '
    'disaggregated to aggregated data.'
)


# ==============================================
# Running
# ==============================================
def half_width(p, reps):
    return HALF_WIDTH_Z * float(np.sqrt(p * (1 - p) / reps))


def _run_one(cell, seed, rep):
    try:
        return {'ok': True, 'metrics': cell.job(seed, rep)}
    except Exception as e:
        # any failure ends this cell only; the run goes on
        if not isinstance(e, LabError):
            log.exception(f"Cell {cell.key} rep {rep} raised {type(e).__name__}")
        return {'ok': False, 'error': {'code': getattr(e, 'code', type(e).__name__), 'message': str(e),
                                       'rep': rep, 'seed': seed}}


def _reduce(cell, seeds, outcomes, extra=None):
    result = {'cell': cell.ids, 'reps': cell.reps, 'seeds': seeds}
    failed = [o for o in outcomes if not o['ok']]
    if failed:
        result.update({'status': 'error', 'error': failed[0]['error'], 'metrics': {}})
        log.warning(f"Cell {cell.key} failed: {failed[0]['error']['message']}")
        return result
    metrics = {}
    for name in outcomes[0]['metrics']:
        values = [o['metrics'][name] for o in outcomes]
        if all(isinstance(v, (bool, np.bool_)) for v in values):
            count = int(sum(bool(v) for v in values))
            rate = count / cell.reps
            metrics[name] = {'kind': 'rate', 'count': count, 'rate': rate, 'half_width': half_width(rate, cell.reps)}
        else:
            arr = np.asarray(values, dtype=float)
            sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
            metrics[name] = {'kind': 'mean', 'rate': float(arr.mean()),
                             'half_width': HALF_WIDTH_Z * sd / np.sqrt(arr.size)}
    result.update({'status': 'ok', 'metrics': metrics})
    if extra:
        result.update(extra(outcomes))
    return result


def _repeat_summary(reps):
    def summary(outcomes):
        hits = np.array([bool(o['metrics']['accuracy']) for o in outcomes], dtype=float)
        per_repeat = hits.reshape(-1, reps).mean(axis=1)
        return {'repeat_rates': per_repeat.tolist(),
                'repeat_std': float(per_repeat.std(ddof=1)) if per_repeat.size > 1 else 0.0}
    return summary


def run_experiment(config):
    """Run every cell of the named experiment and reduce by (cell, rep) index"""
    if config.seed is None:
        raise ConfigError("experiments need a master seed")
    started = time.time()
    p = config.params
    cells = CELL_BUILDERS[config.name](p)
    jobs = [(c, rep, derive_seed(config.seed, config.name, cell.key, rep))
            for c, cell in enumerate(cells) for rep in range(cell.reps)]
    log.info(f"Running {config.name}: {len(cells)} cells, {len(jobs)} repetitions, parallel={config.parallel}")

    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as pool:
            outcomes = list(pool.map(lambda j: _run_one(cells[j[0]], j[2], j[1]), jobs))
    else:
        outcomes = [_run_one(cells[c], seed, rep) for c, rep, seed in jobs]

    results, start = [], 0
    extra = _repeat_summary(p['reps']) if config.name == 'variance_scaling' else None
    for cell in cells:
        chunk = outcomes[start:start + cell.reps]
        seeds = [seed for _, _, seed in jobs[start:start + cell.reps]]
        start += cell.reps
        results.append(_reduce(cell, seeds, chunk, extra))
        log.info(f"Cell {cell.key} done")

    notes = dict(NOTES)
    if config.name == 'ci_tables':
        notes['kci'] = 'random-feature kernel CI test with gamma null; defaults in stat_tests.KCI_CONFIG'
    if config.name == 'k_effect':
        notes['normalization'] = f"g(k) = {p['norm']} for both models"
    if config.name == 'variance_scaling':
        notes['score'] = VARIANCE_SCALING_NOTE
    return ExperimentReport(config.to_dict(), results, round(time.time() - started, 3), notes)


# ==============================================
# Writing
# ==============================================
def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_frame(frame, path):
    frame.to_csv(path, index=False, float_format='%.10g', lineterminator='\n')


def _ci_table_frames(report):
    frames = {}
    for cell in report['cells']:
        ids = cell['cell']
        row = {'f': ids['f'], 'g': ids['g'], 'reps': cell['reps']}
        for h in HYPOTHESES:
            metric = cell['metrics'].get(h)
            row[h] = metric['rate'] if metric else None
        frames.setdefault(ids['structure'], []).append(row)
    return {f"ci_table_{s}.csv": pd.DataFrame(rows, columns=['f', 'g', *HYPOTHESES, 'reps'])
            for s, rows in frames.items()}


def _long_frame(report):
    rows, id_columns = [], []
    for cell in report['cells']:
        for key in cell['cell']:
            if key not in id_columns:
                id_columns.append(key)
        for metric, value in sorted(cell['metrics'].items()):
            row = {**cell['cell'], 'metric': metric, 'rate': value['rate'],
                   'half_width': value['half_width'], 'reps': cell['reps']}
            if 'repeat_std' in cell:
                row['repeat_std'] = cell['repeat_std']
            rows.append(row)
        if cell['status'] == 'error':
            rows.append({**cell['cell'], 'metric': 'error', 'rate': None, 'half_width': None, 'reps': cell['reps']})
    columns = id_columns + ['metric', 'rate', 'half_width', 'reps']
    if any('repeat_std' in r for r in rows):
        columns.append('repeat_std')
    return pd.DataFrame(rows, columns=columns)


def write_report(report, out_dir):
    """report.json, CSV tables and manifest.json (with sha256 per file)"""
    out = Path(out_dir)
    doc = report.to_dict() if isinstance(report, ExperimentReport) else dict(report)
    # wall-clock stays out of the files so reruns are byte-identical
    doc.pop('wall_clock', None)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = []
        report_path = out / 'report.json'
        report_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + '\n')
        files.append({'path': 'report.json', 'columns': None})

        if doc['cells']:
            name = doc['config']['name']
            frames = _ci_table_frames(doc) if name == 'ci_tables' else {f"{name}.csv": _long_frame(doc)}
            for filename, frame in sorted(frames.items()):
                _write_frame(frame, out / filename)
                files.append({'path': filename, 'columns': list(frame.columns)})

        for entry in files:
            entry['sha256'] = _sha256(out / entry['path'])
        manifest = {'files': files}
        (out / 'manifest.json').write_text(json.dumps(manifest, indent=2, sort_keys=True) + '\n')
    except OSError as e:
        raise ReportError(f"{getattr(e, 'filename', None) or out}: {e.strerror or e}")
    log.info(f"Report written to {out}")
    return manifest

