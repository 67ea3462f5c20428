#!/usr/bin/env python3
"""
Causal Discovery
PC (stable, optional skeleton prior), exhaustive linear-Gaussian BIC search,
and the two bivariate direction methods: DirectLiNGAM-style residual
independence and additive-noise-model regression.
"""

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning
from sklearn.kernel_ridge import KernelRidge
from sklearn.preprocessing import scale

from causal_graphs import Cpdag, Dag, apply_meek_rules, dag_edge_sets, dag_to_cpdag, edge_key
from lab_settings import DEFAULT_ALPHA, ConfigError, DiscoveryError, TestError, merge_options
from stat_tests import hsic_test, median_bandwidth, random_features, run_ci_test

log = logging.getLogger(__name__)

# PC defaults
PC_CONFIG = {
    'stable': True,           # adjacency snapshot per level (order independent)
    'max_cond': None,         # largest conditioning set, None = unbounded
    'skeleton_prior': None,   # edge list; skips the skeleton search when given
    'ci_opts': None,          # passed through to the CI test
}

# Exhaustive score search
SCORE_LIMIT = 5               # largest node count searched exhaustively

# Bivariate direction defaults
LINGAM_CONFIG = {
    'n_features': 20,         # random features per variable for the dependence contrast
    'seed': 0,                # fixed so verdicts depend on the data only
    'threshold': 0.0,         # undecided when confidence <= threshold
}

ANM_CONFIG = {
    'ridge': 1e-3,            # kernel ridge penalty is ridge * n
    'bandwidth': 1.0,         # multiplier on the median-distance bandwidth
    'threshold': 0.0,
    'hsic_opts': None,
}

P_FLOOR = 1e-300
MIN_DIRECTION_SAMPLES = 100


@dataclass
class DirectionVerdict:
    direction: str            # x_to_y | y_to_x | undecided
    confidence: float
    details: dict = field(default_factory=dict)


def _verdict(forward_better, confidence, threshold, details):
    if confidence <= threshold:
        return DirectionVerdict('undecided', float(confidence), details)
    return DirectionVerdict('x_to_y' if forward_better else 'y_to_x', float(confidence), details)


# ==============================================
# PC
# ==============================================
class _CiOracle:
    """CI test bound to one dataset; errors carry the variable pair"""

    def __init__(self, data, method, alpha, opts):
        self.data, self.method, self.alpha, self.opts = data, method, alpha, opts
        self.calls = 0

    def __call__(self, a, b, cond):
        self.calls += 1
        try:
            return run_ci_test(self.method, self.data, a, b, tuple(cond), self.alpha, self.opts)
        except TestError as e:
            raise TestError(f"testing {a} vs {b} given {list(cond)}: {e}", code=e.code)


def _skeleton_search(nodes, ci, stable, max_cond):
    adj = {v: set(nodes) - {v} for v in nodes}
    sepsets = {}
    level = 0
    while max_cond is None or level <= max_cond:
        snapshot = {v: set(adj[v]) for v in nodes} if stable else adj
        if not any(len(snapshot[a] - {b}) >= level for a in nodes for b in snapshot[a]):
            break
        for a, b in itertools.combinations(sorted(nodes), 2):
            if b not in adj[a]:
                continue
            for side in (a, b):
                other = b if side == a else a
                candidates = sorted(snapshot[side] - {other})
                found = next((S for S in itertools.combinations(candidates, level)
                              if not ci(a, b, S).reject), None)
                if found is not None:
                    adj[a].discard(b)
                    adj[b].discard(a)
                    sepsets[edge_key(a, b)] = set(found)
                    log.info(f"Removed {a}--{b} given {list(found)}")
                    break
        level += 1
    return adj, sepsets


def _prior_sepsets(nodes, adj, ci):
    """Separating sets for nonadjacent pairs that share a neighbour"""
    sepsets = {}
    for a, c in itertools.combinations(sorted(nodes), 2):
        if c in adj[a] or not (adj[a] & adj[c]):
            continue
        candidates = sorted((adj[a] | adj[c]) - {a, c})
        best, best_p = set(), -1.0
        accepted = None
        for size in range(len(candidates) + 1):
            for S in itertools.combinations(candidates, size):
                result = ci(a, c, S)
                if not result.reject:
                    accepted = set(S)
                    break
                if result.p_value > best_p:
                    best, best_p = set(S), result.p_value
            if accepted is not None:
                break
        sepsets[edge_key(a, c)] = accepted if accepted is not None else best
    return sepsets


def _orient(nodes, adj, sepsets):
    proposed = set()
    for b in sorted(nodes):
        for a, c in itertools.combinations(sorted(adj[b]), 2):
            if c in adj[a]:
                continue
            if b not in sepsets.get(edge_key(a, c), set()):
                proposed.add((a, b))
                proposed.add((c, b))
    directed, undirected = set(), set()
    for a, b in itertools.combinations(sorted(nodes), 2):
        if b not in adj[a]:
            continue
        forward, backward = (a, b) in proposed, (b, a) in proposed
        if forward and not backward:
            directed.add((a, b))
        elif backward and not forward:
            directed.add((b, a))
        else:
            undirected.add(edge_key(a, b))
    return apply_meek_rules(nodes, directed, undirected)


def pc_discover(data, ci='fisher_z', alpha=DEFAULT_ALPHA, opts=None):
    """PC over the columns of an AggregatedDataset"""
    opts = merge_options(PC_CONFIG, opts, 'pc_discover')
    nodes = tuple(data.names)
    if len(nodes) < 2:
        raise DiscoveryError("PC needs at least two variables")
    oracle = _CiOracle(data, ci, alpha, opts['ci_opts'])

    prior = opts['skeleton_prior']
    if prior is None:
        adj, sepsets = _skeleton_search(nodes, oracle, opts['stable'], opts['max_cond'])
    else:
        adj = {v: set() for v in nodes}
        for a, b in prior:
            if a not in adj or b not in adj:
                raise ConfigError(f"skeleton prior edge {a}-{b} names an unknown variable")
            adj[a].add(b)
            adj[b].add(a)
        sepsets = _prior_sepsets(nodes, adj, oracle)

    directed, undirected = _orient(nodes, adj, sepsets)
    cpdag = Cpdag(nodes, directed, undirected)
    log.info(f"PC finished after {oracle.calls} CI tests: {cpdag.to_text() or 'no edges'}")
    return cpdag


# ==============================================
# Exhaustive BIC search
# ==============================================
def _local_bic(X, child, parents):
    n = X.shape[0]
    design = np.hstack([np.ones((n, 1)), X[:, list(parents)]])
    coef, *_ = np.linalg.lstsq(design, X[:, child], rcond=None)
    rss = float(np.sum((X[:, child] - design @ coef) ** 2))
    rss = max(rss, np.finfo(float).tiny)
    return -n / 2 * np.log(rss / n) - (len(parents) + 1) / 2 * np.log(n)


def score_dags(data, max_vars=SCORE_LIMIT):
    """(edge tuple, BIC) for every DAG on the dataset's variables"""
    if max_vars > SCORE_LIMIT:
        raise ConfigError(f"max_vars must be at most {SCORE_LIMIT}")
    s = len(data.names)
    if s > max_vars:
        raise DiscoveryError(f"exhaustive search limit: {s} variables > {max_vars}")
    if data.n <= s + 2:
        raise DiscoveryError(f"score search needs n > s + 2 (n={data.n}, s={s})")
    X = np.asarray(data.data)
    local = {}
    for child in range(s):
        others = [v for v in range(s) if v != child]
        for size in range(len(others) + 1):
            for parents in itertools.combinations(others, size):
                local[child, parents] = _local_bic(X, child, parents)
    scored = []
    for edges in dag_edge_sets(s):
        total = sum(local[v, tuple(sorted(a for a, b in edges if b == v))] for v in range(s))
        scored.append((edges, total))
    return scored


def score_search(data, max_vars=SCORE_LIMIT):
    """CPDAG of the highest-BIC DAG; ties go to fewer edges, then lexicographic order"""
    best_edges, best = None, -np.inf
    # enumeration order is (edge count, edges), so only a strict improvement replaces
    for edges, total in score_dags(data, max_vars):
        if best_edges is None or total > best + 1e-9 * max(1.0, abs(best)):
            best_edges, best = edges, total
    names = tuple(data.names)
    dag = Dag(names, [(names[a], names[b]) for a, b in best_edges])
    cpdag = dag_to_cpdag(dag)
    log.info(f"Best BIC {best:.4f}: {cpdag.to_text() or 'no edges'}")
    return cpdag


# ==============================================
# Bivariate direction
# ==============================================
def _as_pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise DiscoveryError(f"inputs differ in length ({x.size} vs {y.size})")
    if x.size < MIN_DIRECTION_SAMPLES:
        raise DiscoveryError(f"direction methods need at least {MIN_DIRECTION_SAMPLES} samples, got {x.size}",
                             code='SAMPLE_SIZE')
    if x.std() <= 0 or y.std() <= 0:
        raise DiscoveryError("zero-variance input", code='ZERO_VARIANCE')
    return scale(x), scale(y)


def _residual(target, regressor):
    """Residual of an OLS fit of target on regressor (both centred)"""
    return target - (np.mean(target * regressor) / np.mean(regressor * regressor)) * regressor


def _dependence(u, v, opts):
    """Random-feature HSIC estimate ||C_uv||^2 (smaller = more independent)"""
    fu, _ = random_features(u[:, None], opts['n_features'], opts['seed'])
    fv, _ = random_features(v[:, None], opts['n_features'], opts['seed'] + 1)
    fu -= fu.mean(axis=0)
    fv -= fv.mean(axis=0)
    c = fu.T @ fv / u.size
    return float(np.sum(c * c))


def direct_lingam_direction(x, y, opts=None):
    """Causal order of a pair: the regressor that is more independent of its residual is the cause"""
    opts = merge_options(LINGAM_CONFIG, opts, 'direct_lingam_direction')
    x, y = _as_pair(x, y)
    forward = _dependence(x, scale(_residual(y, x)), opts)
    backward = _dependence(y, scale(_residual(x, y)), opts)
    details = {'forward_statistic': forward, 'backward_statistic': backward}
    return _verdict(forward < backward, abs(forward - backward), opts['threshold'], details)


def _krr_residual(inputs, target, opts):
    n = inputs.size
    sigma = median_bandwidth(inputs[:, None]) * opts['bandwidth']
    model = KernelRidge(kernel='rbf', alpha=opts['ridge'] * n, gamma=1.0 / (2.0 * sigma * sigma))
    with warnings.catch_warnings():
        warnings.simplefilter('error', LinAlgWarning)
        try:
            model.fit(inputs[:, None], target)
        except (LinAlgWarning, np.linalg.LinAlgError) as e:
            raise DiscoveryError(f"kernel ridge system is singular (ridge={opts['ridge']}): {e}",
                                 code='SINGULAR_RIDGE')
    return target - model.predict(inputs[:, None])


def anm_direction(x, y, opts=None):
    """Additive-noise direction: larger input/residual independence p-value wins"""
    opts = merge_options(ANM_CONFIG, opts, 'anm_direction')
    x, y = _as_pair(x, y)
    p_forward = hsic_test(x, _krr_residual(x, y, opts), opts=opts['hsic_opts']).p_value
    p_backward = hsic_test(y, _krr_residual(y, x, opts), opts=opts['hsic_opts']).p_value
    confidence = abs(np.log(max(p_forward, P_FLOOR)) - np.log(max(p_backward, P_FLOOR)))
    details = {'forward_p': p_forward, 'backward_p': p_backward}
    return _verdict(p_forward > p_backward, confidence, opts['threshold'], details)


DIRECTION_METHODS = {
    'lingam': direct_lingam_direction,
    'anm': anm_direction,
}
