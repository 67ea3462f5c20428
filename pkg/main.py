#!/usr/bin/env python3
"""
Aggregation Lab - command line
Generates panels, aggregates them, runs CI tests, discovery, the theory
checks, the exact oracle and the experiment harness.

    python3 main.py generate --config fixtures/fork_linear.json --seed 7 --k 2 --n 500 --out panel.csv
    python3 main.py experiment --config docs/ci_tables_fork.json --seed 7 --out runs/
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from aggregation import (NormalizationSpec, aggregate_panel, aggregate_series, dataset_from_csv,
                         dataset_to_csv)
from discovery import DIRECTION_METHODS, pc_discover, score_search
from exact_oracle import (build_joint_table, check_corollary_sufficient, check_chain_fork_condition,
                          joint_table_to_csv, search_violating_spec)
from experiments import EXPERIMENT_DEFAULTS, ExperimentConfig, run_experiment, write_report
from lab_settings import CLI_EXIT_CODES, DEFAULT_ALPHA, ConfigError, LabError, setup_logging
from scm_generators import (NoiseSpec, Panel, VarModelSpec, load_spec, panel_from_csv, panel_to_csv,
                            require_valid, simulate_aligned, simulate_var, spec_to_dict)
from stat_tests import CI_TESTS, hsic_test, run_ci_test
from theory_checks import (asymptotic_equivalence_check, conditional_variance_profile, estimate_fhat,
                           nongaussianity_curve, profile_to_csv, region_consistency_check,
                           residual_independence_check, theoretical_excess_kurtosis)

log = logging.getLogger(__name__)

CHECKS = ('fhat', 'residual', 'profile', 'regions', 'asymptotic', 'kurtosis', 'chain_fork', 'corollary')
STOCHASTIC_CHECKS = ('fhat', 'residual', 'profile', 'regions', 'asymptotic', 'kurtosis')
DISCOVERY_METHODS = ('pc', 'score', *DIRECTION_METHODS)

# Defaults for the inline flags
CLI_CONFIG = {
    'k': 2,
    'n': 500,
    'norm': 'one',
    'asymptotic_ks': '1,2,5,10,20,50',
    'kurtosis_ks': '1,2,4,8,16,32',
    'experiment_out': 'runs',
}


class LabArgumentParser(argparse.ArgumentParser):
    """Usage errors end with the same machine-parsable line as every other failure"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(CLI_EXIT_CODES['config'], f"ERROR USAGE: {message}\n")


# ==============================================
# Argument helpers
# ==============================================
def _int_list(text):
    try:
        values = [int(v) for v in str(text).split(',') if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got '{text}'")
    if not values or min(values) < 1:
        raise ConfigError(f"window lengths must be positive integers, got '{text}'")
    return values


def _names(text):
    return tuple(v.strip() for v in (text or '').split(',') if v.strip())


def _single_config(args):
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    if len(args.config) > 1:
        raise ConfigError(f"{args.command} takes one --config, got {len(args.config)}")
    return args.config[0]


def _require_seed(args):
    if args.seed is None:
        raise ConfigError(f"{args.command} is stochastic and needs --seed")
    return args.seed


def _k(args):
    if args.k is None:
        return CLI_CONFIG['k']
    try:
        k = int(args.k)
    except ValueError:
        raise ConfigError(f"--k must be one positive integer here, got '{args.k}'")
    if k < 1:
        raise ConfigError(f"--k must be positive, got {k}")
    return k


def _n(args):
    return args.n if args.n is not None else CLI_CONFIG['n']


def _norm(args, default=None):
    return NormalizationSpec(args.norm or default or CLI_CONFIG['norm'])


def _emit(doc, out=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + '\n'
    if out:
        Path(out).write_text(text)
        log.info(f"Result written to {out}")
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"{path}: {e}")


# ==============================================
# Subcommands
# ==============================================
def cmd_generate(args):
    spec = load_spec(_single_config(args))
    require_valid(spec)
    seed = _require_seed(args)
    if isinstance(spec, VarModelSpec):
        series = simulate_var(spec, _n(args), seed)
        panel = Panel(series[None], spec.variables, series.shape[0], {'seed': seed})
    else:
        panel = simulate_aligned(spec, _k(args), _n(args), seed)
    if args.out:
        panel_to_csv(panel, args.out)
    else:
        panel_to_csv(panel, sys.stdout)
    return 0


def cmd_aggregate(args):
    panel = panel_from_csv(_single_config(args))
    norm = _norm(args)
    if panel.n == 1 and args.k is not None and _k(args) < panel.k:
        # one long series: non-overlapping windows of length k
        dataset = aggregate_series(panel.data[0], _k(args), norm, panel.variables)
    else:
        dataset = aggregate_panel(panel, norm)
    dataset_to_csv(dataset, args.out or sys.stdout)
    return 0


def cmd_citest(args):
    data = dataset_from_csv(_single_config(args))
    if not args.x or not args.y:
        raise ConfigError("citest needs --x and --y")
    test = args.test or 'fisher_z'
    given = _names(args.given)
    if test == 'hsic':
        if given:
            raise ConfigError("hsic is unconditional; drop --given or use kci")
        result = hsic_test(data.column(args.x), data.column(args.y), args.alpha)
    elif test in CI_TESTS:
        opts = {'seed': args.seed} if test == 'kci' and args.seed is not None else None
        result = run_ci_test(test, data, args.x, args.y, given, args.alpha, opts)
    else:
        raise ConfigError(f"unknown test '{test}' (expected fisher_z, kci or hsic)")
    _emit({'query': {'x': args.x, 'y': args.y, 'given': list(given), 'test': test},
           **result.to_dict()}, args.out)
    return 0


def cmd_discover(args):
    data = dataset_from_csv(_single_config(args))
    if args.vars:
        data = data.select(_names(args.vars))
    method = args.method or 'pc'
    if method not in DISCOVERY_METHODS:
        raise ConfigError(f"unknown method '{method}' (expected one of {', '.join(DISCOVERY_METHODS)})")
    if method == 'pc':
        cpdag = pc_discover(data, args.test or 'fisher_z', args.alpha)
        _emit(cpdag.to_dict(), args.out)
    elif method == 'score':
        _emit(score_search(data).to_dict(), args.out)
    else:
        x, y = args.x or data.names[0], args.y or data.names[1]
        verdict = DIRECTION_METHODS[method](data.column(x), data.column(y))
        _emit({'x': x, 'y': y, 'direction': verdict.direction, 'confidence': verdict.confidence,
               **verdict.details}, args.out)
    return 0


def _bivariate(args):
    spec = load_spec(_single_config(args))
    require_valid(spec)
    if isinstance(spec, VarModelSpec) or len(spec.variables) != 2:
        raise ConfigError(f"check {args.check} needs a bivariate aligned spec")
    panel = simulate_aligned(spec, _k(args), _n(args), _require_seed(args))
    return panel, spec.mechanisms[spec.variables[1]]


def _check_fhat(args):
    panel, mech = _bivariate(args)
    fhat = estimate_fhat(panel, mech)
    if args.out:
        profile_to_csv(zip(fhat.grid.tolist(), fhat.values.tolist()), args.out, 'fhat')
    else:
        _emit(fhat.to_dict())


def _check_residual(args):
    panel, mech = _bivariate(args)
    fhat = estimate_fhat(panel, mech)
    _emit(residual_independence_check(panel, fhat, args.alpha, mech).to_dict(), args.out)


def _check_profile(args):
    panel, mech = _bivariate(args)
    profile = conditional_variance_profile(panel, mech)
    if args.out:
        profile_to_csv(profile, args.out, 'variance')
    else:
        _emit([[g, v if np.isfinite(v) else None] for g, v in profile])


def _check_regions(args):
    if not args.config or len(args.config) != 2:
        raise ConfigError("check regions needs --config twice (region A, region B)")
    spec_a, spec_b = (load_spec(path) for path in args.config)
    require_valid(spec_a)
    require_valid(spec_b)
    report = region_consistency_check(spec_a, spec_b, _k(args), _n(args), _require_seed(args), args.alpha)
    _emit(report.to_dict(), args.out)


def _check_asymptotic(args):
    spec = load_spec(_single_config(args))
    if not isinstance(spec, VarModelSpec):
        raise ConfigError("check asymptotic needs a VAR spec (a document with 'B')")
    ks = _int_list(args.k or CLI_CONFIG['asymptotic_ks'])
    summary = asymptotic_equivalence_check(spec, _norm(args, 'sqrt_k'), ks, _n(args), _require_seed(args))
    _emit({'normalization': _norm(args, 'sqrt_k').kind, 'reps': _n(args), 'per_k': summary}, args.out)


def _check_kurtosis(args):
    doc = _read_json(_single_config(args))
    if 'kind' in doc:
        noise = NoiseSpec.from_dict(doc)
    else:
        spec = load_spec(args.config[0])
        variable = args.x or spec.variables[0]
        if variable not in spec.mechanisms:
            raise ConfigError(f"unknown variable '{variable}'")
        noise = spec.mechanisms[variable].noise
    ks = _int_list(args.k or CLI_CONFIG['kurtosis_ks'])
    curve = nongaussianity_curve(noise, ks, _n(args), _require_seed(args))
    base = theoretical_excess_kurtosis(noise)
    _emit({'noise': noise.to_dict(),
           'curve': [{'k': k, 'excess_kurtosis': value, 'theoretical': base / k} for k, value in curve]},
          args.out)


def _oracle_joint(args):
    k = _k(args)
    if args.config:
        spec = load_spec(_single_config(args))
    else:
        # no spec given: search for a random discrete spec that breaks the aggregate CI
        spec, ci = search_violating_spec(_require_seed(args), args.name or 'fork', k)
        log.info(f"Using a searched spec with deviation {ci.max_deviation:.3g}")
    joint = build_joint_table(spec, k)
    if args.out:
        joint_table_to_csv(joint, args.out)
    return spec, joint


def _check_chain_fork(args):
    spec, joint = _oracle_joint(args)
    _emit({'spec': spec_to_dict(spec), 'k': joint.k, **check_chain_fork_condition(joint).to_dict()})


def _check_corollary(args):
    spec, joint = _oracle_joint(args)
    _emit({'spec': spec_to_dict(spec), 'k': joint.k, **check_corollary_sufficient(joint).to_dict()})


CHECK_RUNNERS = {
    'fhat': _check_fhat,
    'residual': _check_residual,
    'profile': _check_profile,
    'regions': _check_regions,
    'asymptotic': _check_asymptotic,
    'kurtosis': _check_kurtosis,
    'chain_fork': _check_chain_fork,
    'corollary': _check_corollary,
}


def cmd_check(args):
    if args.check in STOCHASTIC_CHECKS:
        _require_seed(args)
    CHECK_RUNNERS[args.check](args)
    return 0


def cmd_experiment(args):
    if args.config:
        config = ExperimentConfig.load(_single_config(args), args.seed, args.parallel)
    elif args.name:
        config = ExperimentConfig(args.name, {}, args.seed, args.parallel or 1)
    else:
        raise ConfigError("experiment needs --config or --name")
    if config.seed is None:
        raise ConfigError("experiment is stochastic and needs --seed")
    out = Path(args.out or CLI_CONFIG['experiment_out'])
    print("=" * 50)
    print(f"EXPERIMENT {config.name} (seed {config.seed}, parallel {config.parallel})")
    print("=" * 50)
    report = run_experiment(config)
    write_report(report, out)
    failed = [c['cell'] for c in report.cells if c['status'] == 'error']
    print(f"{len(report.cells)} cells in {report.wall_clock:.1f}s, {len(failed)} with errors")
    print(f"Manifest: {out / 'manifest.json'}")
    return 0


def cmd_list_experiments(args):
    for name, params in EXPERIMENT_DEFAULTS.items():
        print(f"{name}: {json.dumps(params, sort_keys=True)}")
    return 0


COMMANDS = {
    'generate': cmd_generate,
    'aggregate': cmd_aggregate,
    'citest': cmd_citest,
    'discover': cmd_discover,
    'check': cmd_check,
    'experiment': cmd_experiment,
    'list-experiments': cmd_list_experiments,
}


def build_parser():
    parser = LabArgumentParser(description='Causal discovery under temporal aggregation')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=LabArgumentParser)

    def common(p):
        p.add_argument('--config', action='append', help='Spec, data or experiment file')
        p.add_argument('--seed', type=int, help='Master seed (required for stochastic commands)')
        p.add_argument('--out', help='Output file (directory for experiment)')
        p.add_argument('--alpha', type=float, default=DEFAULT_ALPHA, help='Significance level')
        p.add_argument('--verbose', action='store_true', help='Status lines on stderr')
        return p

    p = common(sub.add_parser('generate', help='Spec -> panel CSV'))
    p.add_argument('--k', help='Steps per realization')
    p.add_argument('--n', type=int, help='Realizations (series length for VAR specs)')

    p = common(sub.add_parser('aggregate', help='Panel CSV -> aggregated dataset CSV'))
    p.add_argument('--k', help='Window length when the panel holds one long series')
    p.add_argument('--norm', choices=('one', 'k', 'sqrt_k'), help='g(k)')

    p = common(sub.add_parser('citest', help='Dataset + query -> test result JSON'))
    p.add_argument('--x', help='First variable')
    p.add_argument('--y', help='Second variable')
    p.add_argument('--given', help='Comma-separated conditioning variables')
    p.add_argument('--test', help='fisher_z | kci | hsic')

    p = common(sub.add_parser('discover', help='Dataset + method -> CPDAG or direction JSON'))
    p.add_argument('--method', help=' | '.join(DISCOVERY_METHODS))
    p.add_argument('--test', help='CI test used by pc')
    p.add_argument('--x', help='Cause candidate for lingam / anm')
    p.add_argument('--y', help='Effect candidate for lingam / anm')
    p.add_argument('--vars', help='Comma-separated columns to keep (default: all)')

    p = common(sub.add_parser('check', help='Theory checks and the exact oracle'))
    p.add_argument('check', choices=CHECKS)
    p.add_argument('--k', help='Window length (comma list for asymptotic / kurtosis)')
    p.add_argument('--n', type=int, help='Realizations')
    p.add_argument('--norm', choices=('one', 'k', 'sqrt_k'), help='g(k) for asymptotic')
    p.add_argument('--x', help='Variable whose noise feeds the kurtosis curve')
    p.add_argument('--name', help='Structure searched when chain_fork / corollary get no --config')

    p = common(sub.add_parser('experiment', help='Config -> report, CSV tables and manifest'))
    p.add_argument('--name', help='Run a named experiment with its defaults')
    p.add_argument('--parallel', type=int, help='Worker threads')

    common(sub.add_parser('list-experiments', help='Experiment names and default parameters'))
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except LabError as e:
        print(f"ERROR {e.code}: {e}", file=sys.stderr)
        return CLI_EXIT_CODES[e.exit_kind]
    except (np.linalg.LinAlgError, FloatingPointError) as e:
        print(f"ERROR NUMERIC: {e}", file=sys.stderr)
        return CLI_EXIT_CODES['runtime']
    except OSError as e:
        print(f"ERROR IO: {e}", file=sys.stderr)
        return CLI_EXIT_CODES['runtime']


if __name__ == "__main__":
    sys.exit(main())
