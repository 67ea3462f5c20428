#!/usr/bin/env python3
"""
Exact Oracle
Enumerates every noise assignment of a discrete-noise aligned model to get
the exact joint law of (X_1:k, Y_1:k, Z_1:k), then checks conditional
independence of aggregates and the chain/fork probability relations with
no sampling error.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from lab_settings import CI_EXACT_TOL, PROB_SUM_TOL, VALUE_LATTICE, OracleError, make_rng
from scm_generators import (IDENTITY, BasicFunction, MechanismSpec, NoiseSpec, aligned_spec, propagate,
                            require_valid)

log = logging.getLogger(__name__)

MAX_STATES = 10 ** 7
MAX_DENSE_CELLS = 5 * 10 ** 7
PROB_COLUMN = 'prob'


@dataclass
class JointTable:
    """Exact law of every step of every variable; one row per support point"""
    frame: pd.DataFrame
    variables: tuple
    k: int
    structure: str = 'other'

    def __post_init__(self):
        probs = self.frame[PROB_COLUMN].to_numpy()
        if np.any(probs < 0):
            raise OracleError("joint table has negative probabilities")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL * max(1, len(probs)):
            raise OracleError(f"joint table sums to {probs.sum()!r}, not 1")

    @property
    def columns(self):
        return [c for c in self.frame.columns if c != PROB_COLUMN]


@dataclass
class CiCheck:
    holds: bool
    max_deviation: float
    query: str = ''

    def to_dict(self):
        return {'query': self.query, 'holds': self.holds, 'max_deviation': self.max_deviation}


@dataclass
class ChainForkCheck:
    ci_holds: bool
    condition_ii_residual: float
    condition_iii_residual: float
    structure: str
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'ci_holds': self.ci_holds,
            'condition_ii_residual': self.condition_ii_residual,
            'condition_iii_residual': self.condition_iii_residual,
            'structure': self.structure,
            **self.details,
        }


@dataclass
class CorollaryCheck:
    A_holds: bool
    B_holds: bool
    VI_holds: bool
    implication_ok: bool

    def to_dict(self):
        return {'A_holds': self.A_holds, 'B_holds': self.B_holds, 'VI_holds': self.VI_holds,
                'implication_ok': self.implication_ok}


def column_name(variable, t):
    return f"{variable}_{t}"


def _snap(values):
    """Round to the value lattice; -0.0 becomes 0.0"""
    return np.round(values, VALUE_LATTICE) + 0.0


def classify_structure(spec):
    """chain | fork | collider | other, reading X, Y, Z off the instantaneous DAG"""
    if set(spec.variables) != {'X', 'Y', 'Z'}:
        return 'other'
    edges = set(spec.instantaneous_dag.edges)
    if edges in ({('X', 'Y'), ('Y', 'Z')}, {('Z', 'Y'), ('Y', 'X')}):
        return 'chain'
    if edges == {('Y', 'X'), ('Y', 'Z')}:
        return 'fork'
    if edges == {('X', 'Y'), ('Z', 'Y')}:
        return 'collider'
    return 'other'


# ==============================================
# Enumeration
# ==============================================
def state_space_size(spec, k):
    size = 1
    for v in spec.variables:
        size *= len(spec.mechanisms[v].noise.support) ** k
    for v in spec.self_lag:
        size *= len(spec.initial[v].support)
    return size


def build_joint_table(spec, k, max_states=MAX_STATES):
    require_valid(spec)
    for v in spec.variables:
        if spec.mechanisms[v].noise.kind != 'discrete':
            raise OracleError(f"noise of {v} is {spec.mechanisms[v].noise.kind}, exact enumeration needs discrete")
    for v in spec.self_lag:
        if spec.initial[v].kind != 'discrete':
            raise OracleError(f"initial law of {v} must be discrete")
    size = state_space_size(spec, k)
    if size > max_states:
        raise OracleError(f"state space of {size} assignments exceeds {max_states}", code='STATE_SPACE')

    slots = [(v, t) for v in spec.variables for t in range(k)] + [(v, 'initial') for v in sorted(spec.self_lag)]
    laws = [spec.mechanisms[v].noise if t != 'initial' else spec.initial[v] for v, t in slots]
    index = np.unravel_index(np.arange(size), [len(law.support) for law in laws])
    prob = np.ones(size)
    noises = {v: np.empty((size, k)) for v in spec.variables}
    initial = {}
    for (v, t), law, idx in zip(slots, laws, index):
        prob *= np.asarray(law.probs)[idx]
        draw = np.asarray(law.support)[idx]
        if t == 'initial':
            initial[v] = draw
        else:
            noises[v][:, t] = draw

    values = propagate(spec, noises, initial, k)
    columns = {column_name(v, t + 1): _snap(values[v][:, t]) for v in spec.variables for t in range(k)}
    frame = pd.DataFrame(columns)
    frame[PROB_COLUMN] = prob
    frame = frame.groupby(list(columns), sort=True, as_index=False)[PROB_COLUMN].sum()
    frame = frame[frame[PROB_COLUMN] > 0].reset_index(drop=True)
    log.info(f"Enumerated {size} assignments into {len(frame)} support points")
    return JointTable(frame, spec.variables, k, classify_structure(spec))


# ==============================================
# Quantities
# ==============================================
def joint_quantity(joint, name):
    """Columns realizing `name`: S_V (aggregate), V_t (one step) or V_1:k (the path)"""
    if name.startswith('S_'):
        v = name[2:]
        if v not in joint.variables:
            raise OracleError(f"unknown variable in '{name}'")
        total = joint.frame[[column_name(v, t) for t in range(1, joint.k + 1)]].sum(axis=1)
        return pd.DataFrame({name: _snap(total.to_numpy())})
    if name.endswith(':k'):
        v, first = name[:-2].rsplit('_', 1)
        if v not in joint.variables or first != '1':
            raise OracleError(f"unknown path quantity '{name}'")
        return joint.frame[[column_name(v, t) for t in range(1, joint.k + 1)]]
    if name in joint.frame.columns and name != PROB_COLUMN:
        return joint.frame[[name]]
    raise OracleError(f"unknown quantity '{name}'")


def _codes(joint, names, tag):
    """Integer code per row for the combined value of the named quantities"""
    if not names:
        return np.zeros(len(joint.frame), dtype=int), 1
    parts = [joint_quantity(joint, n).add_prefix(f"{tag}{i}:") for i, n in enumerate(names)]
    block = pd.concat(parts, axis=1)
    codes = block.groupby(list(block.columns), sort=True).ngroup().to_numpy()
    return codes, int(codes.max()) + 1


def _dense(joint, *groups):
    """Dense probability array over the joint codes of each quantity group"""
    coded = [_codes(joint, names, f"g{i}") for i, names in enumerate(groups)]
    shape = tuple(size for _, size in coded)
    if np.prod(shape, dtype=float) > MAX_DENSE_CELLS:
        raise OracleError(f"query table of shape {shape} is too large", code='STATE_SPACE')
    P = np.zeros(shape)
    np.add.at(P, tuple(codes for codes, _ in coded), joint.frame[PROB_COLUMN].to_numpy())
    return P


def _as_names(q):
    if q is None:
        return []
    if isinstance(q, str):
        return [p.strip() for p in q.split(',') if p.strip()]
    return list(q)


def check_ci_exact(joint, a, b, c=()):
    """Largest p(c)-weighted deviation |p(a,b,c) - p(a,c) p(b,c) / p(c)|"""
    a, b, c = _as_names(a), _as_names(b), _as_names(c)
    P = _dense(joint, a, b, c)
    p_ac = P.sum(axis=1)
    p_bc = P.sum(axis=0)
    p_c = P.sum(axis=(0, 1))
    live = p_c > 0  # zero-probability conditioning events are skipped
    expected = p_ac[:, None, live] * p_bc[None, :, live] / p_c[live]
    deviation = float(np.max(np.abs(P[:, :, live] - expected))) if live.any() else 0.0
    query = f"{','.join(a)} _||_ {','.join(b)} | {','.join(c) or '{}'}"
    return CiCheck(deviation < CI_EXACT_TOL, deviation, query)


def _relation_residual(P_outer, P_inner):
    """max |sum_y alpha (beta - gamma)| with alpha = p(o | s_y, y), beta = p(y | s_y, i), gamma = p(y | s_y).

    P_outer is indexed (s_y, o, y) and P_inner (s_y, i, y), both joint probabilities.
    """
    with np.errstate(invalid='ignore', divide='ignore'):
        p_y_sy = P_outer.sum(axis=1)                                 # (s_y, y)
        alpha = np.nan_to_num(P_outer / p_y_sy[:, None, :])         # (s_y, o, y)
        p_i_sy = P_inner.sum(axis=2)                                 # (s_y, i)
        beta = np.nan_to_num(P_inner / p_i_sy[:, :, None])          # (s_y, i, y)
        gamma = np.nan_to_num(p_y_sy / p_y_sy.sum(axis=1, keepdims=True))  # (s_y, y)
    diff = beta - gamma[:, None, :]                                  # (s_y, i, y)
    residual = np.einsum('soy,siy->sio', alpha, diff)
    live = p_i_sy > 0
    return float(np.max(np.abs(residual[live]))) if live.any() else 0.0


def check_chain_fork_condition(joint):
    """Conditions (ii) and (iii) of the chain/fork relation against exact CI"""
    if set(joint.variables) != {'X', 'Y', 'Z'}:
        raise OracleError("the relation check needs an X, Y, Z layout")
    if joint.k < 2:
        raise OracleError("the relation check needs k >= 2")
    path = ['Y_1:k']
    # axes: (s_y, s_x, s_z, y_path)
    P = _dense(joint, ['S_Y'], ['S_X'], ['S_Z'], path)
    p_yzx = P.sum(axis=1)   # (s_y, s_z, y)
    p_yxy = P.sum(axis=2)   # (s_y, s_x, y)
    residual_ii = _relation_residual(p_yzx, p_yxy)
    residual_iii = _relation_residual(p_yxy, p_yzx)
    ci = check_ci_exact(joint, ['S_X'], ['S_Z'], ['S_Y'])
    result = ChainForkCheck(ci.holds, residual_ii, residual_iii, joint.structure,
                            {'max_deviation': ci.max_deviation})
    consistent = (residual_ii < CI_EXACT_TOL) == ci.holds and (residual_iii < CI_EXACT_TOL) == ci.holds
    result.details['equivalence_ok'] = consistent
    if not consistent:
        message = (f"relation residuals ({residual_ii:.3g}, {residual_iii:.3g}) disagree with "
                   f"exact CI (holds={ci.holds})")
        if joint.structure in ('chain', 'fork'):
            raise OracleError(message, code='CHAIN_FORK')
        log.info(f"{joint.structure} layout: {message}")
    return result


def check_corollary_sufficient(joint):
    a = check_ci_exact(joint, ['S_X'], ['Y_1:k'], ['S_Y']).holds
    b = check_ci_exact(joint, ['S_Z'], ['Y_1:k'], ['S_Y']).holds
    vi = check_ci_exact(joint, ['S_X'], ['S_Z'], ['S_Y']).holds
    return CorollaryCheck(a, b, vi, (not (a or b)) or vi)


# ==============================================
# Random specs
# ==============================================
INNER_POOL = ('identity', 'square', 'cube', 'tanh', 'scale')
OUTER_POOL = ('identity', 'square', 'scale')
SCALES = (-2.0, -1.0, 2.0)


def _random_function(rng, pool):
    tag = pool[rng.integers(len(pool))]
    if tag == 'scale':
        return BasicFunction('scale', float(SCALES[rng.integers(len(SCALES))]))
    return BasicFunction(tag)


def _random_noise(rng):
    support = rng.choice(np.arange(-2, 3), size=3, replace=False)
    return NoiseSpec.discrete(sorted(float(v) for v in support))


def random_discrete_spec(rng, structure='fork'):
    """Small ternary-noise trivariate spec with random mechanisms"""
    def link(parent):
        return MechanismSpec({parent: (_random_function(rng, INNER_POOL),)},
                             _random_function(rng, OUTER_POOL), _random_noise(rng))

    def root():
        return MechanismSpec({}, IDENTITY, _random_noise(rng))

    if structure == 'chain':
        mechanisms = {'X': root(), 'Y': link('X'), 'Z': link('Y')}
    elif structure == 'fork':
        mechanisms = {'X': link('Y'), 'Y': root(), 'Z': link('Y')}
    elif structure == 'collider':
        inner = {'X': (_random_function(rng, INNER_POOL),), 'Z': (_random_function(rng, INNER_POOL),)}
        mechanisms = {'X': root(), 'Y': MechanismSpec(inner, _random_function(rng, OUTER_POOL),
                                                      _random_noise(rng)), 'Z': root()}
    else:
        raise OracleError(f"unknown structure '{structure}'")
    return aligned_spec(mechanisms, ('X', 'Y', 'Z'))


def search_violating_spec(seed, structure='fork', k=2, tries=200, min_deviation=1e-4):
    """First random spec whose aggregates violate X-bar _||_ Z-bar | Y-bar"""
    rng = make_rng(seed, 'violating-spec', structure)
    for attempt in range(tries):
        spec = random_discrete_spec(rng, structure)
        ci = check_ci_exact(build_joint_table(spec, k), ['S_X'], ['S_Z'], ['S_Y'])
        if ci.max_deviation > min_deviation:
            log.info(f"Violating {structure} spec found after {attempt + 1} tries")
            return spec, ci
    raise OracleError(f"no violating {structure} spec in {tries} tries")


def joint_table_to_csv(joint, path):
    """Assignment columns plus probability, rows sorted for diffing"""
    frame = joint.frame.sort_values(joint.columns).reset_index(drop=True)
    frame.to_csv(path, index=False, float_format='%.17g')
    log.info(f"Joint table written to {path}")
