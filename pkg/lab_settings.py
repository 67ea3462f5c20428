#!/usr/bin/env python3
"""
Lab Settings and Shared Plumbing
Contains the shared configuration, error classes, logging setup and the
seeded random streams used by every other module.
"""

import hashlib
import logging
import sys

import numpy as np

# Significance level used whenever a caller does not pass one
DEFAULT_ALPHA = 0.05

# Exactness thresholds
PROB_SUM_TOL = 1e-12      # discrete noise probabilities must sum to 1
VALUE_LATTICE = 9         # decimals kept when merging enumerated states
CI_EXACT_TOL = 1e-10      # deviation below which an exact CI "holds"

# Monte Carlo half-width multiplier (95% normal interval)
HALF_WIDTH_Z = 1.96

# Exit codes for the command line
CLI_EXIT_CODES = {
    'ok': 0,
    'config': 2,
    'runtime': 3,
}


# ==============================================
# Errors
# ==============================================
class LabError(Exception):
    """Base error; `code` is the stable machine-readable tag"""
    code = 'LAB_ERROR'
    exit_kind = 'runtime'

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class SpecError(LabError):
    code = 'SPEC_INVALID'
    exit_kind = 'config'


class ConfigError(LabError):
    code = 'CONFIG_INVALID'
    exit_kind = 'config'


class GenerationError(LabError):
    code = 'NON_FINITE'


class AggregationError(LabError):
    code = 'AGGREGATION'


class TestError(LabError):
    __test__ = False  # not a pytest class
    code = 'TEST_FAILED'


class DiscoveryError(LabError):
    code = 'DISCOVERY'


class CheckError(LabError):
    code = 'CHECK'


class OracleError(LabError):
    code = 'ORACLE'


class ReportError(LabError):
    code = 'IO'


def merge_options(defaults, opts, where):
    """Overlay caller options on a defaults dict, rejecting unknown keys"""
    opts = dict(opts or {})
    unknown = sorted(set(opts) - set(defaults))
    if unknown:
        raise ConfigError(f"{where}: unknown option(s) {', '.join(unknown)}")
    return {**defaults, **opts}


# ==============================================
# Logging
# ==============================================
def setup_logging(verbose=False):
    """Plain status lines on stderr, INFO only when asked for"""
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter('%(message)s'))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.INFO if verbose else logging.WARNING)


# ==============================================
# Random streams
# ==============================================
def stable_key(key):
    """Map a stream key (int or str) to a non-negative int, stable across runs"""
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ConfigError(f"stream key must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def make_rng(seed, *keys):
    """Counter-based generator for the stream (seed, *keys)"""
    if seed is None:
        raise ConfigError("a seed is required; time-based seeding is not used")
    seq = np.random.SeedSequence(stable_key(seed), spawn_key=tuple(stable_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, *keys):
    """64-bit child seed for (seed, *keys), independent of scheduling order"""
    seq = np.random.SeedSequence(stable_key(seed), spawn_key=tuple(stable_key(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def content_seed(*arrays):
    """Seed derived from array contents (used for reproducible random features)"""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return int.from_bytes(h.digest()[:8], 'little')
