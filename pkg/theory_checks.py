#!/usr/bin/env python3
"""
Theory Checks
Numerical checks of functional consistency under aggregation: the
conditional-expectation mechanism f-hat, residual independence, the
conditional-variance profile, cross-region consistency, coupling of lagged
and instantaneous models, and the decay of non-Gaussianity.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.stats import iqr, kurtosis, norm

from aggregation import NormalizationSpec
from lab_settings import DEFAULT_ALPHA, CheckError, derive_seed, make_rng, merge_options
from scm_generators import MechanismSpec, require_valid, simulate_aligned
from stat_tests import hsic_test

log = logging.getLogger(__name__)

# f-hat estimation defaults
FHAT_CONFIG = {
    'grid_points': 41,
    'quantiles': (0.01, 0.99),   # default grid spans these quantiles of the aggregate
    'min_support': 10,           # samples within one bandwidth needed for a grid value
    'estimator': 'nadaraya_watson',  # or local_linear (exact on linear mechanisms)
}

RESIDUAL_CONFIG = {
    'coverage': 0.95,            # share of samples that must fall inside the grid
    'hsic_max_points': 2000,
}

REGION_CONFIG = {
    'bootstrap': 200,
    'estimator': 'nadaraya_watson',
    'grid_points': 41,
    'quantiles': (0.01, 0.99),
    'min_support': 10,
}

ESTIMATORS = ('nadaraya_watson', 'local_linear')


@dataclass
class FhatEstimate:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_used: int
    support: np.ndarray = None
    estimator: str = 'nadaraya_watson'

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise CheckError("f-hat grid must be strictly ascending")

    @property
    def supported(self):
        return np.isfinite(self.values)

    def predict(self, t):
        """Linear interpolation between supported grid values"""
        ok = self.supported
        if ok.sum() < 2:
            raise CheckError("f-hat has fewer than two supported grid points", code='SUPPORT')
        return np.interp(t, self.grid[ok], self.values[ok])

    def to_dict(self):
        return {
            'grid': self.grid.tolist(),
            'values': [v if np.isfinite(v) else None for v in self.values.tolist()],
            'bandwidth': self.bandwidth,
            'n_used': self.n_used,
            'estimator': self.estimator,
        }


@dataclass
class ResidualDiagnostics:
    residuals: np.ndarray
    independence: object
    variance_profile: list
    coverage: float

    def to_dict(self):
        return {
            'residual_mean': float(np.mean(self.residuals)),
            'residual_std': float(np.std(self.residuals)),
            'independence': self.independence.to_dict(),
            'variance_profile': [[t, v if np.isfinite(v) else None] for t, v in self.variance_profile],
            'coverage': self.coverage,
        }


@dataclass
class RegionReport:
    fhat_a: FhatEstimate
    fhat_b: FhatEstimate
    max_gap: float
    gap_significant: bool
    slope_a: float
    slope_b: float
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'fhat_a': self.fhat_a.to_dict(),
            'fhat_b': self.fhat_b.to_dict(),
            'max_gap': self.max_gap,
            'gap_significant': self.gap_significant,
            'slope_a': self.slope_a,
            'slope_b': self.slope_b,
            **self.details,
        }


# ==============================================
# Kernel regression helpers
# ==============================================
def silverman_bandwidth(t):
    t = np.asarray(t, dtype=float)
    spread = min(np.std(t, ddof=1), iqr(t) / 1.34)
    if spread <= 0:
        spread = np.std(t, ddof=1)
    if spread <= 0:
        raise CheckError("aggregate has zero spread; no bandwidth", code='SUPPORT')
    return 0.9 * spread * t.size ** (-0.2)


def default_grid(t, points=41, quantiles=(0.01, 0.99)):
    lo, hi = np.quantile(t, quantiles)
    return np.linspace(lo, hi, points)


def _kernel_weights(grid, t, h):
    return norm.pdf((grid[:, None] - t[None, :]) / h)


def _local_fit(weights, t, grid, s, estimator):
    """Value (and slope for local_linear) at each grid point; weights is (grid, n)"""
    w0 = weights.sum(axis=1)
    with np.errstate(invalid='ignore', divide='ignore'):
        if estimator == 'nadaraya_watson':
            return weights @ s / w0, np.full(grid.shape, np.nan)
        d = t[None, :] - grid[:, None]
        w1 = (weights * d).sum(axis=1)
        w2 = (weights * d * d).sum(axis=1)
        t0 = weights @ s
        t1 = (weights * d) @ s
        det = w0 * w2 - w1 * w1
        return (w2 * t0 - w1 * t1) / det, (w0 * t1 - w1 * t0) / det


def _aggregate_pair(panel, f):
    """(X-bar, sum_t f(X_t)) for the cause of a bivariate panel"""
    if isinstance(f, MechanismSpec):
        cause = f.parents[0] if f.parents else panel.variables[0]
        X = panel.series(cause)
        S = np.broadcast_to(f.deterministic({cause: X}), X.shape)
    else:
        X = panel.series(panel.variables[0])
        S = np.broadcast_to(f(X), X.shape)
    return X.sum(axis=1), np.asarray(S, dtype=float).sum(axis=1)


def _fit_fhat(t, s, grid, bandwidth, min_support, estimator):
    if estimator not in ESTIMATORS:
        raise CheckError(f"unknown estimator '{estimator}'")
    h = bandwidth if bandwidth is not None else silverman_bandwidth(t)
    weights = _kernel_weights(grid, t, h)
    support = (np.abs(grid[:, None] - t[None, :]) <= h).sum(axis=1)
    values, slopes = _local_fit(weights, t, grid, s, estimator)
    values = np.where(support >= min_support, values, np.nan)
    missing = int(np.sum(support < min_support))
    if missing:
        log.info(f"{missing} grid point(s) lack local support and are left missing")
    return FhatEstimate(grid, values, float(h), t.size, support, estimator), weights, slopes


# ==============================================
# Checks
# ==============================================
def estimate_fhat(panel, f, grid=None, bandwidth=None, opts=None):
    """Kernel regression of sum_t f(X_t) on X-bar (g(k) = 1)"""
    opts = merge_options(FHAT_CONFIG, opts, 'estimate_fhat')
    t, s = _aggregate_pair(panel, f)
    grid = default_grid(t, opts['grid_points'], opts['quantiles']) if grid is None else np.asarray(grid, float)
    fhat, _, _ = _fit_fhat(t, s, grid, bandwidth, opts['min_support'], opts['estimator'])
    return fhat


def conditional_variance_profile(panel, f, grid=None, bandwidth=None, opts=None):
    """Variance of sum_t f(X_t) in a window of half-width h around each grid point.

    A local linear trend in X-bar is removed inside each window first.
    """
    opts = merge_options(FHAT_CONFIG, opts, 'conditional_variance_profile')
    t, s = _aggregate_pair(panel, f)
    grid = default_grid(t, opts['grid_points'], opts['quantiles']) if grid is None else np.asarray(grid, float)
    h = bandwidth if bandwidth is not None else silverman_bandwidth(t)
    profile = []
    for g in grid:
        inside = np.abs(t - g) <= h
        m = int(inside.sum())
        if m < max(opts['min_support'], 3):
            profile.append((float(g), float('nan')))
            continue
        d, y = t[inside] - g, s[inside]
        design = np.column_stack([np.ones(m), d])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        profile.append((float(g), float(resid @ resid / (m - 2))))
    return profile


def residual_independence_check(panel, fhat, alpha=DEFAULT_ALPHA, f=None, opts=None):
    """N = Y-bar - f-hat(X-bar), tested against X-bar with HSIC"""
    opts = merge_options(RESIDUAL_CONFIG, opts, 'residual_independence_check')
    cause, effect = panel.variables[0], panel.variables[1]
    t = panel.series(cause).sum(axis=1)
    y = panel.series(effect).sum(axis=1)
    ok = fhat.supported
    lo, hi = fhat.grid[ok].min(), fhat.grid[ok].max()
    coverage = float(np.mean((t >= lo) & (t <= hi)))
    if coverage < opts['coverage']:
        raise CheckError(f"f-hat grid covers {coverage:.1%} of X-bar, need {opts['coverage']:.0%}",
                         code='COVERAGE')
    inside = (t >= lo) & (t <= hi)
    residuals = y[inside] - fhat.predict(t[inside])
    independence = hsic_test(residuals, t[inside], alpha, {'max_points': opts['hsic_max_points']})
    profile = []
    if f is not None:
        profile = conditional_variance_profile(panel, f, fhat.grid, fhat.bandwidth)
    return ResidualDiagnostics(residuals, independence, profile, coverage)


def _bootstrap_se(weights, t, grid, s, estimator, rounds, rng):
    n = t.size
    draws = np.empty((rounds, grid.size))
    with np.errstate(invalid='ignore', divide='ignore'):
        for b in range(rounds):
            counts = rng.multinomial(n, np.full(n, 1.0 / n)).astype(float)
            values, _ = _local_fit(weights * counts[None, :], t, grid, s, estimator)
            draws[b] = values
    return np.nanstd(draws, axis=0, ddof=1)


def region_consistency_check(spec_a, spec_b, k, n, seed, alpha=DEFAULT_ALPHA, opts=None):
    """Compare f-hat estimated in two regions that share the X->Y mechanism"""
    opts = merge_options(REGION_CONFIG, opts, 'region_consistency_check')
    effect = spec_a.variables[1]
    mech = spec_a.mechanisms[effect]
    if spec_b.mechanisms.get(effect) != mech:
        raise CheckError(f"regions do not share the mechanism of {effect}")
    panels = {'a': simulate_aligned(spec_a, k, n, derive_seed(seed, 'region', 'a')),
              'b': simulate_aligned(spec_b, k, n, derive_seed(seed, 'region', 'b'))}
    pairs = {r: _aggregate_pair(p, mech) for r, p in panels.items()}

    ranges = [np.quantile(t, opts['quantiles']) for t, _ in pairs.values()]
    lo, hi = max(r[0] for r in ranges), min(r[1] for r in ranges)
    if lo >= hi:
        raise CheckError("regions have disjoint X-bar supports", code='DISJOINT_SUPPORT')
    grid = np.linspace(lo, hi, opts['grid_points'])

    fits, se = {}, {}
    for r, (t, s) in pairs.items():
        fhat, weights, _ = _fit_fhat(t, s, grid, None, opts['min_support'], opts['estimator'])
        fits[r] = fhat
        rng = make_rng(seed, 'bootstrap', r)
        se[r] = _bootstrap_se(weights, t, grid, s, opts['estimator'], opts['bootstrap'], rng)

    joint = fits['a'].supported & fits['b'].supported & np.isfinite(se['a']) & np.isfinite(se['b'])
    if not joint.any():
        raise CheckError("no grid point is supported in both regions", code='DISJOINT_SUPPORT')
    gap = np.abs(fits['a'].values - fits['b'].values)[joint]
    band = np.sqrt(se['a'] ** 2 + se['b'] ** 2)[joint]
    z = norm.ppf(1 - alpha / (2 * joint.sum()))
    # exact fits leave gap and band at rounding level
    floor = 1e-9 * (1.0 + np.abs(fits['a'].values[joint]))
    significant = bool(np.any(gap > np.maximum(z * band, floor)))

    slopes = {}
    for r, (t, s) in pairs.items():
        h = fits[r].bandwidth
        _, slope = _local_fit(_kernel_weights(np.zeros(1), t, h), t, np.zeros(1), s, 'local_linear')
        slopes[r] = float(slope[0])
    log.info(f"Region gap {gap.max():.4g} (significant={significant})")
    return RegionReport(fits['a'], fits['b'], float(gap.max()), significant, slopes['a'], slopes['b'],
                        {'k': k, 'n': n, 'seed': seed, 'alpha': alpha, 'z': float(z),
                         'grid_points_compared': int(joint.sum())})


def asymptotic_equivalence_check(var_spec, norm_spec, ks, reps, seed, aligned_B=None):
    """Coupled lagged vs instantaneous aggregates: per-k summary of ||Y-bar - X-bar||"""
    require_valid(var_spec)
    norm_spec = norm_spec or NormalizationSpec('sqrt_k')
    if norm_spec.kind == 'one':
        raise CheckError("the equivalence needs g(k) growing with k; use k or sqrt_k")
    B = var_spec.matrix
    A = B if aligned_B is None else np.asarray(aligned_B, dtype=float)
    if A.shape != B.shape:
        raise CheckError(f"instantaneous matrix shape {A.shape} differs from {B.shape}")
    s = var_spec.dimension
    to_instant = np.linalg.inv(np.eye(s) - A)
    b_norm = float(np.linalg.norm(A, 2))
    summary = []
    for k in ks:
        noise = np.stack([nz.sample(make_rng(seed, 'asymptotic', k, i), (reps, k + 1))
                          for i, nz in enumerate(var_spec.noise)], axis=-1)
        X = np.empty((reps, k, s))
        previous = noise[:, 0]
        for t in range(1, k + 1):
            previous = previous @ B.T + noise[:, t]
            X[:, t - 1] = previous
        Y = noise[:, 1:] @ to_instant.T
        g = norm_spec.g(k)
        diff = np.linalg.norm(Y.sum(axis=1) / g - X.sum(axis=1) / g, axis=1)

        norms = np.linalg.norm(noise, axis=2)
        powers = b_norm ** (k - np.arange(1, k + 1) + 1)
        scale = 1.0 / ((1.0 - b_norm) * g)
        bound = scale * (norms[:, 1:] @ powers + (b_norm - b_norm ** (k + 1)) * norms[:, 0])
        expected = scale * norms.mean() * (powers.sum() + b_norm - b_norm ** (k + 1))
        summary.append({
            'k': k,
            'mean': float(diff.mean()),
            'variance': float(diff.var(ddof=1)) if reps > 1 else 0.0,
            'mean_bound': float(bound.mean()),
            'expected_bound': float(expected),
            'dominated': bool(np.all(diff <= bound * (1 + 1e-9) + 1e-12)),
        })
        log.info(f"k={k}: mean difference {diff.mean():.4g}, bound {bound.mean():.4g}")
    return summary


def theoretical_excess_kurtosis(noise):
    if noise.kind == 'gaussian':
        return 0.0
    if noise.kind == 'uniform':
        return -1.2
    v, p = np.asarray(noise.support), np.asarray(noise.probs)
    mu = p @ v
    m2, m4 = p @ (v - mu) ** 2, p @ (v - mu) ** 4
    return float(m4 / m2 ** 2 - 3.0)


def nongaussianity_curve(noise, ks, n, seed):
    """Excess kurtosis of the k-fold i.i.d. sum for each k"""
    curve = []
    for k in ks:
        sums = noise.sample(make_rng(seed, 'kurtosis', k), (n, k)).sum(axis=1)
        curve.append((k, float(kurtosis(sums, fisher=True))))
    return curve


def profile_to_csv(pairs, path, value_name='value'):
    """(grid, value) pairs for plotting"""
    frame = pd.DataFrame(list(pairs), columns=['grid', value_name])
    frame.to_csv(path, index=False, float_format='%.17g')
    log.info(f"Profile written to {path}")
