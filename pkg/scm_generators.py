#!/usr/bin/env python3
"""
Structural Model Generators
Declarative specs for aligned instantaneous models and VAR(1) processes,
their validation, seeded samplers, the model builders used by the
experiments, and the JSON / CSV formats for specs and panels.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from causal_graphs import Dag
from lab_settings import PROB_SUM_TOL, GenerationError, SpecError, make_rng

log = logging.getLogger(__name__)

NOISE_KINDS = ('gaussian', 'uniform', 'discrete')
FUNCTION_TAGS = ('identity', 'square', 'cube', 'tanh', 'scale')
PNL_TAGS = ('square', 'cube', 'tanh')  # pool F and G are drawn from


# ==============================================
# Domain types
# ==============================================
@dataclass(frozen=True)
class NoiseSpec:
    """gaussian(mean, variance) | uniform(lo, hi) | discrete(support, probs)"""
    kind: str
    mean: float = 0.0
    variance: float = 1.0
    lo: float = 0.0
    hi: float = 1.0
    support: tuple = ()
    probs: tuple = ()

    @classmethod
    def gaussian(cls, mean=0.0, variance=1.0):
        return cls('gaussian', mean=float(mean), variance=float(variance))

    @classmethod
    def uniform(cls, lo=0.0, hi=1.0):
        return cls('uniform', lo=float(lo), hi=float(hi))

    @classmethod
    def discrete(cls, support, probs=None):
        support = tuple(float(v) for v in support)
        if probs is None:
            probs = [1.0 / len(support)] * len(support) if support else []
        return cls('discrete', support=support, probs=tuple(float(p) for p in probs))

    def violations(self, where):
        found = []
        if self.kind == 'gaussian':
            if not np.isfinite(self.mean) or not np.isfinite(self.variance):
                found.append(f"{where}: non-finite parameter")
            elif self.variance <= 0:
                found.append(f"{where}: zero variance" if self.variance == 0
                             else f"{where}: negative variance")
        elif self.kind == 'uniform':
            if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
                found.append(f"{where}: non-finite parameter")
            elif self.hi <= self.lo:
                found.append(f"{where}: zero variance (hi must exceed lo)")
        elif self.kind == 'discrete':
            if not self.support:
                found.append(f"{where}: empty support")
            elif len(self.support) != len(self.probs):
                found.append(f"{where}: support and probs differ in length")
            elif any(p < 0 for p in self.probs):
                found.append(f"{where}: negative probability")
            elif abs(sum(self.probs) - 1.0) > PROB_SUM_TOL:
                found.append(f"{where}: probabilities sum to {sum(self.probs)!r}, not 1")
            elif len({v for v, p in zip(self.support, self.probs) if p > 0}) < 2:
                found.append(f"{where}: zero variance")
        else:
            found.append(f"{where}: unknown noise kind '{self.kind}'")
        return found

    def sample(self, rng, size):
        if self.kind == 'gaussian':
            return rng.normal(self.mean, np.sqrt(self.variance), size=size)
        if self.kind == 'uniform':
            return rng.uniform(self.lo, self.hi, size=size)
        return rng.choice(np.asarray(self.support), size=size, p=np.asarray(self.probs))

    def to_dict(self):
        if self.kind == 'gaussian':
            return {'kind': 'gaussian', 'mean': self.mean, 'variance': self.variance}
        if self.kind == 'uniform':
            return {'kind': 'uniform', 'lo': self.lo, 'hi': self.hi}
        return {'kind': 'discrete', 'support': list(self.support), 'probs': list(self.probs)}

    @classmethod
    def from_dict(cls, doc):
        kind = doc.get('kind')
        if kind == 'gaussian':
            return cls.gaussian(doc.get('mean', 0.0), doc.get('variance', 1.0))
        if kind == 'uniform':
            return cls.uniform(doc.get('lo', 0.0), doc.get('hi', 1.0))
        if kind == 'discrete':
            return cls.discrete(doc.get('support', []), doc.get('probs'))
        raise SpecError(f"noise: unknown kind '{kind}'")


@dataclass(frozen=True)
class BasicFunction:
    """identity | square | cube | tanh | scale(c)"""
    tag: str
    c: float = 1.0

    @property
    def is_linear(self):
        return self.tag in ('identity', 'scale')

    @property
    def slope(self):
        return self.c if self.tag == 'scale' else 1.0

    def __call__(self, x):
        if self.tag == 'identity':
            return x
        if self.tag == 'square':
            return x * x
        if self.tag == 'cube':
            return x * x * x
        if self.tag == 'tanh':
            return np.tanh(x)
        return self.c * x

    def violations(self, where):
        if self.tag not in FUNCTION_TAGS:
            return [f"{where}: unknown function '{self.tag}'"]
        if self.tag == 'scale' and not np.isfinite(self.c):
            return [f"{where}: non-finite scale coefficient"]
        return []

    def to_json(self):
        return {'tag': 'scale', 'c': self.c} if self.tag == 'scale' else self.tag

    @classmethod
    def from_json(cls, doc):
        if isinstance(doc, str):
            return cls(doc)
        return cls(doc['tag'], float(doc.get('c', 1.0)))


IDENTITY = BasicFunction('identity')


def scale(c):
    return BasicFunction('scale', float(c))


def compose(functions, x):
    """Apply a sequence of BasicFunctions left to right"""
    for fn in functions:
        x = fn(x)
    return x


@dataclass(frozen=True)
class MechanismSpec:
    """value = outer( sum_p inner_p(parent_p) [+ lag] + noise )"""
    inner: dict = field(default_factory=dict)
    outer: BasicFunction = IDENTITY
    noise: NoiseSpec = field(default_factory=NoiseSpec.gaussian)

    def __post_init__(self):
        inner = {}
        for parent, fns in self.inner.items():
            inner[parent] = (fns,) if isinstance(fns, BasicFunction) else tuple(fns)
        object.__setattr__(self, 'inner', inner)

    def __hash__(self):
        return hash((tuple(sorted(self.inner.items())), self.outer, self.noise))

    @property
    def parents(self):
        return tuple(self.inner)

    @property
    def is_linear(self):
        return self.outer.is_linear and all(fn.is_linear for fns in self.inner.values() for fn in fns)

    def evaluate(self, parent_values, noise, lag_term=0.0):
        total = noise + lag_term
        for parent, fns in self.inner.items():
            total = total + compose(fns, parent_values[parent])
        return self.outer(total)

    def deterministic(self, parent_values):
        """Noise-free part of the mechanism"""
        return self.evaluate(parent_values, 0.0)

    def to_dict(self):
        return {
            'inner': {p: [fn.to_json() for fn in fns] for p, fns in self.inner.items()},
            'outer': self.outer.to_json(),
            'noise': self.noise.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc):
        inner = {}
        for parent, fns in doc.get('inner', {}).items():
            fns = fns if isinstance(fns, list) else [fns]
            inner[parent] = tuple(BasicFunction.from_json(fn) for fn in fns)
        return cls(inner, BasicFunction.from_json(doc.get('outer', 'identity')),
                   NoiseSpec.from_dict(doc.get('noise', {'kind': 'gaussian'})))


@dataclass(frozen=True)
class AlignedModelSpec:
    variables: tuple
    instantaneous_dag: Dag
    mechanisms: dict
    self_lag: dict = field(default_factory=dict)   # var -> (BasicFunction, coefficient)
    initial: dict = field(default_factory=dict)    # var -> NoiseSpec

    def __post_init__(self):
        object.__setattr__(self, 'variables', tuple(self.variables))

    def to_dict(self):
        return {
            'variables': list(self.variables),
            'instantaneous_dag': {'edges': sorted([a, b] for a, b in self.instantaneous_dag.edges)},
            'mechanisms': {v: self.mechanisms[v].to_dict() for v in self.variables if v in self.mechanisms},
            'self_lag': {v: {'function': fn.to_json(), 'coefficient': beta}
                         for v, (fn, beta) in sorted(self.self_lag.items())},
            'initial': {v: noise.to_dict() for v, noise in sorted(self.initial.items())},
        }


@dataclass(frozen=True)
class VarModelSpec:
    dimension: int
    B: tuple
    noise: tuple
    burn_in: int = 0
    variables: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'B', tuple(tuple(float(v) for v in row) for row in self.B))
        object.__setattr__(self, 'noise', tuple(self.noise))
        if not self.variables:
            object.__setattr__(self, 'variables', tuple(f"X{i + 1}" for i in range(self.dimension)))
        object.__setattr__(self, 'variables', tuple(self.variables))

    @property
    def matrix(self):
        return np.array(self.B, dtype=float)

    @property
    def spectral_norm(self):
        return float(np.linalg.norm(self.matrix, 2))

    def to_dict(self):
        return {
            'dimension': self.dimension,
            'B': [list(row) for row in self.B],
            'noise': [n.to_dict() for n in self.noise],
            'burn_in': self.burn_in,
            'variables': list(self.variables),
        }


@dataclass(frozen=True)
class Panel:
    """n realizations x k steps x s variables"""
    data: np.ndarray
    variables: tuple
    k: int
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim != 3 or data.shape[1] != self.k or data.shape[2] != len(self.variables):
            raise SpecError(f"panel shape {data.shape} does not match k={self.k}, "
                            f"{len(self.variables)} variables")
        if not np.all(np.isfinite(data)):
            raise GenerationError("panel contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'variables', tuple(self.variables))

    @property
    def n(self):
        return self.data.shape[0]

    def series(self, name):
        """n x k block of one variable"""
        return self.data[:, :, self.variables.index(name)]


@dataclass
class Validation:
    violations: list

    @property
    def ok(self):
        return not self.violations

    @property
    def has_cycle(self):
        return any(v.endswith('cycle') for v in self.violations)


# ==============================================
# Validation
# ==============================================
def validate_spec(spec):
    """Collect invariant violations; never raises"""
    if isinstance(spec, VarModelSpec):
        return Validation(_var_violations(spec))
    if isinstance(spec, AlignedModelSpec):
        return Validation(_aligned_violations(spec))
    return Validation([f"spec: unsupported type {type(spec).__name__}"])


def _aligned_violations(spec):
    found = []
    names = spec.variables
    if len(set(names)) != len(names):
        found.append("variables: duplicate name")
    dag = spec.instantaneous_dag
    if set(dag.nodes) != set(names):
        found.append("instantaneous_dag: nodes differ from variables")
    found += [f"instantaneous_dag: {v}" for v in dag.violations()]
    for v in names:
        mech = spec.mechanisms.get(v)
        if mech is None:
            found.append(f"mechanisms.{v}: missing")
            continue
        if set(mech.parents) != set(dag.parents(v)):
            found.append(f"mechanisms.{v}: parents {sorted(mech.parents)} differ from "
                         f"DAG parents {sorted(dag.parents(v))}")
        for parent, fns in mech.inner.items():
            for fn in fns:
                found += fn.violations(f"mechanisms.{v}.inner.{parent}")
        found += mech.outer.violations(f"mechanisms.{v}.outer")
        found += mech.noise.violations(f"mechanisms.{v}.noise")
    for v in set(spec.mechanisms) - set(names):
        found.append(f"mechanisms.{v}: not a declared variable")
    for v, (fn, beta) in spec.self_lag.items():
        where = f"self_lag.{v}"
        if v not in names:
            found.append(f"{where}: not a declared variable")
            continue
        found += fn.violations(where)
        if not np.isfinite(beta):
            found.append(f"{where}: non-finite coefficient")
        mech = spec.mechanisms.get(v)
        linear_gaussian = (mech is not None and mech.outer.is_linear and fn.is_linear
                           and mech.noise.kind == 'gaussian')
        if linear_gaussian and abs(beta * fn.slope * mech.outer.slope) >= 1:
            found.append(f"{where}: |coefficient| must be < 1 for a linear-Gaussian variable")
        if v not in spec.initial:
            found.append(f"initial.{v}: missing for self-lagged variable")
    for v, noise in spec.initial.items():
        found += noise.violations(f"initial.{v}")
    return found


def _var_violations(spec):
    found = []
    s = spec.dimension
    B = spec.matrix
    if s < 1:
        found.append("dimension: must be positive")
    if B.shape != (s, s):
        found.append(f"B: shape {B.shape} is not {s}x{s}")
    elif not np.all(np.isfinite(B)):
        found.append("B: non-finite entry")
    elif spec.spectral_norm >= 1:
        found.append(f"B: spectral norm {spec.spectral_norm:.4g} >= 1")
    if len(spec.noise) != s:
        found.append(f"noise: expected {s} components, got {len(spec.noise)}")
    for i, noise in enumerate(spec.noise):
        found += noise.violations(f"noise[{i}]")
    if spec.burn_in < 0:
        found.append("burn_in: must be non-negative")
    if len(spec.variables) != s:
        found.append("variables: length differs from dimension")
    return found


def require_valid(spec):
    result = validate_spec(spec)
    if not result.ok:
        code = 'SPEC_CYCLE' if result.has_cycle else 'SPEC_INVALID'
        raise SpecError('; '.join(result.violations), code=code)


def spec_hash(spec):
    doc = json.dumps(spec.to_dict(), sort_keys=True)
    return hashlib.sha256(doc.encode('utf-8')).hexdigest()[:16]


# ==============================================
# Sampling
# ==============================================
def propagate(spec, noises, initial_values, k):
    """Run the aligned model forward over k steps.

    noises: var -> (m, k) noise draws; initial_values: var -> (m,) draws of
    V_0 for self-lagged variables. Returns var -> (m, k) values.
    """
    order = spec.instantaneous_dag.topological_order()
    m = next(iter(noises.values())).shape[0]
    values = {v: np.empty((m, k)) for v in spec.variables}
    with np.errstate(over='ignore', invalid='ignore'):
        for t in range(k):
            for v in order:
                mech = spec.mechanisms[v]
                parents = {p: values[p][:, t] for p in mech.parents}
                lag_term = 0.0
                if v in spec.self_lag:
                    fn, beta = spec.self_lag[v]
                    previous = initial_values[v] if t == 0 else values[v][:, t - 1]
                    lag_term = beta * fn(previous)
                out = mech.evaluate(parents, noises[v][:, t], lag_term)
                if not np.all(np.isfinite(out)):
                    raise GenerationError(f"non-finite value at step {t + 1} for variable {v}")
                values[v][:, t] = out
    return values


def simulate_aligned(spec, k, n, seed):
    """n independent realizations of k steps of the aligned model.

    Each variable draws one (n, k) block, row by row, from its own stream of
    `seed`, so realization i gets the same noise for every n > i.
    """
    require_valid(spec)
    if k < 1 or n < 1:
        raise SpecError(f"k and n must be positive, got k={k}, n={n}")
    noises = {v: spec.mechanisms[v].noise.sample(make_rng(seed, 'noise', v), (n, k))
              for v in spec.variables}
    initial = {v: spec.initial[v].sample(make_rng(seed, 'initial', v), n) for v in spec.self_lag}
    values = propagate(spec, noises, initial, k)
    data = np.stack([values[v] for v in spec.variables], axis=-1)
    return Panel(data, spec.variables, k, {'spec_hash': spec_hash(spec), 'seed': seed})


def simulate_var(spec, T, seed):
    """T x s series of X_t = B X_{t-1} + N_t after burn_in discarded steps"""
    require_valid(spec)
    if T < 1:
        raise SpecError(f"T must be positive, got {T}")
    steps = spec.burn_in + T + 1
    noise = np.column_stack([nz.sample(make_rng(seed, 'var', i), steps)
                             for i, nz in enumerate(spec.noise)])
    B = spec.matrix
    X = np.empty_like(noise)
    X[0] = noise[0]
    for t in range(1, steps):
        X[t] = B @ X[t - 1] + noise[t]
    return X[spec.burn_in + 1:]


# ==============================================
# Model builders
# ==============================================
def root(noise=None):
    return MechanismSpec({}, IDENTITY, noise or NoiseSpec.gaussian())


def linear(parents, noise=None):
    """sum_p c_p * parent + noise"""
    return MechanismSpec({p: (scale(c),) for p, c in parents.items()}, IDENTITY,
                         noise or NoiseSpec.gaussian())


def pnl(parent, F, G, noise=None):
    """G(F(parent) + noise)"""
    return MechanismSpec({parent: (F,)}, G, noise or NoiseSpec.gaussian())


def aligned_spec(mechanisms, order, self_lag=None, initial=None):
    """Build an AlignedModelSpec whose DAG is read off the mechanisms"""
    edges = [(p, v) for v, m in mechanisms.items() for p in m.parents]
    return AlignedModelSpec(tuple(order), Dag(order, edges), dict(mechanisms),
                            dict(self_lag or {}), dict(initial or {}))


def sample_pnl_pair(rng):
    """Uniform draw of (F, G) from {square, cube, tanh}"""
    F, G = rng.choice(len(PNL_TAGS), size=2)
    return BasicFunction(PNL_TAGS[F]), BasicFunction(PNL_TAGS[G])


def _link(parent, link, noise):
    if link is None:
        return linear({parent: 1.0}, noise)
    F, G = link
    return pnl(parent, F, G, noise)


def bivariate_model(kind='linear', coefficient=2.0, noise=None, cause_noise=None):
    """Y = c*X + N (linear) or Y = X^2 + N (nonlinear); standard uniform noise"""
    noise = noise or NoiseSpec.uniform(0.0, 1.0)
    cause_noise = cause_noise or NoiseSpec.uniform(0.0, 1.0)
    if kind == 'linear':
        effect = linear({'X': coefficient}, noise)
    elif kind == 'nonlinear':
        effect = MechanismSpec({'X': (BasicFunction('square'),)}, IDENTITY, noise)
    else:
        raise SpecError(f"unknown bivariate kind '{kind}'")
    return aligned_spec({'X': root(cause_noise), 'Y': effect}, ('X', 'Y'))


def additive_model(fn, cause_noise=None, noise=None):
    """X = N_X, Y = fn(X) + N_Y"""
    mech = MechanismSpec({'X': (fn,)}, IDENTITY, noise or NoiseSpec.gaussian())
    return aligned_spec({'X': root(cause_noise), 'Y': mech}, ('X', 'Y'))


def chain_model(f=None, g=None, noise=None):
    """X = N_X, Y = f(X, N_Y), Z = g(Y, N_Z); a link is None (linear) or (F, G)"""
    noise = noise or NoiseSpec.gaussian()
    return aligned_spec({'X': root(noise), 'Y': _link('X', f, noise), 'Z': _link('Y', g, noise)},
                        ('X', 'Y', 'Z'))


def fork_model(f=None, g=None, noise=None):
    """Y = N_Y, X = f(Y, N_X), Z = g(Y, N_Z)"""
    noise = noise or NoiseSpec.gaussian()
    return aligned_spec({'X': _link('Y', f, noise), 'Y': root(noise), 'Z': _link('Y', g, noise)},
                        ('X', 'Y', 'Z'))


def collider_model(f=None, g=None, noise=None):
    """X = N_X, Z = N_Z, Y = f(X) + g(Z) + N_Y, nonlinear links as G(F(.))"""
    noise = noise or NoiseSpec.gaussian()
    inner = {'X': (IDENTITY,) if f is None else tuple(f),
             'Z': (IDENTITY,) if g is None else tuple(g)}
    return aligned_spec({'X': root(noise), 'Y': MechanismSpec(inner, IDENTITY, noise), 'Z': root(noise)},
                        ('X', 'Y', 'Z'))


STRUCTURES = {'chain': chain_model, 'fork': fork_model, 'collider': collider_model}


def four_variable_model(kind='linear', variances=None):
    """Z = X + Y + N_Z, H = Z + N_H (squares in the nonlinear case)"""
    variances = {'X': 1.0, 'Y': 1.0, 'Z': 1.0, 'H': 1.0, **(variances or {})}
    noise = {v: NoiseSpec.gaussian(0.0, var) for v, var in variances.items()}
    fn = IDENTITY if kind == 'linear' else BasicFunction('square')
    if kind not in ('linear', 'nonlinear'):
        raise SpecError(f"unknown four-variable kind '{kind}'")
    mechanisms = {
        'X': root(noise['X']),
        'Y': root(noise['Y']),
        'Z': MechanismSpec({'X': (fn,), 'Y': (fn,)}, IDENTITY, noise['Z']),
        'H': MechanismSpec({'Z': (fn,)}, IDENTITY, noise['H']),
    }
    return aligned_spec(mechanisms, ('X', 'Y', 'Z', 'H'))


def var_fork_model(a=0.2, b=0.5, burn_in=100):
    """Lagged fork: Y_{t-1} drives X_t and Z_t, every series has self-lag a"""
    B = [[a, b, 0.0],
         [0.0, a, 0.0],
         [0.0, b, a]]
    return VarModelSpec(3, B, (NoiseSpec.gaussian(),) * 3, burn_in, ('X', 'Y', 'Z'))


def aligned_fork_model(a=0.2, b=0.5):
    """Instantaneous counterpart of var_fork_model"""
    stationary = NoiseSpec.gaussian(0.0, 1.0 / (1.0 - a * a))
    mechanisms = {'X': linear({'Y': b}), 'Y': root(), 'Z': linear({'Y': b})}
    lags = {v: (IDENTITY, a) for v in ('X', 'Y', 'Z')}
    return aligned_spec(mechanisms, ('X', 'Y', 'Z'), lags, {v: stationary for v in lags})


# ==============================================
# JSON / CSV
# ==============================================
def spec_from_dict(doc):
    """Aligned spec when the document has `mechanisms`, VAR spec when it has `B`"""
    try:
        if 'B' in doc:
            return VarModelSpec(int(doc['dimension']), doc['B'],
                                tuple(NoiseSpec.from_dict(n) for n in doc['noise']),
                                int(doc.get('burn_in', 0)), tuple(doc.get('variables', ())))
        variables = tuple(doc['variables'])
        edges = [tuple(e) for e in doc.get('instantaneous_dag', {}).get('edges', [])]
        mechanisms = {v: MechanismSpec.from_dict(m) for v, m in doc['mechanisms'].items()}
        self_lag = {v: (BasicFunction.from_json(d.get('function', 'identity')), float(d['coefficient']))
                    for v, d in doc.get('self_lag', {}).items()}
        initial = {v: NoiseSpec.from_dict(d) for v, d in doc.get('initial', {}).items()}
        return AlignedModelSpec(variables, Dag(variables, edges), mechanisms, self_lag, initial)
    except (KeyError, TypeError, ValueError) as e:
        raise SpecError(f"malformed spec document: {e}")


def spec_to_dict(spec):
    return spec.to_dict()


def load_spec(path):
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise SpecError(f"{path}: {e}")
    return spec_from_dict(doc)


def panel_to_frame(panel):
    n, k, _ = panel.data.shape
    frame = pd.DataFrame(panel.data.reshape(n * k, -1), columns=list(panel.variables))
    frame.insert(0, 't', np.tile(np.arange(1, k + 1), n))
    frame.insert(0, 'rep', np.repeat(np.arange(n), k))
    return frame


def panel_to_csv(panel, path):
    """Header `rep,t,<var names>`"""
    panel_to_frame(panel).to_csv(path, index=False, float_format='%.17g')
    log.info(f"Panel written to {path}")


def panel_from_csv(path):
    frame = pd.read_csv(path, float_precision='round_trip')
    if list(frame.columns[:2]) != ['rep', 't']:
        raise SpecError(f"{path}: expected header rep,t,<variables>")
    variables = tuple(frame.columns[2:])
    k = int(frame['t'].max())
    n = frame['rep'].nunique()
    frame = frame.sort_values(['rep', 't'])
    data = frame[list(variables)].to_numpy().reshape(n, k, len(variables))
    return Panel(data, variables, k, {'source': str(path)})
