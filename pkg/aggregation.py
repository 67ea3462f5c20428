#!/usr/bin/env python3
"""
Temporal Aggregation
Sums k consecutive steps (scaled by g(k)) over panels of independent
realizations, or over non-overlapping windows of one long series.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from lab_settings import AggregationError, SpecError

log = logging.getLogger(__name__)

NORMALIZATIONS = ('one', 'k', 'sqrt_k')


@dataclass(frozen=True)
class NormalizationSpec:
    kind: str = 'one'

    def __post_init__(self):
        if self.kind not in NORMALIZATIONS:
            raise SpecError(f"unknown normalization '{self.kind}' (expected one of {', '.join(NORMALIZATIONS)})")

    def g(self, k):
        if k < 1:
            raise AggregationError(f"k must be positive, got {k}")
        if self.kind == 'one':
            return 1.0
        if self.kind == 'k':
            return float(k)
        return float(np.sqrt(k))


@dataclass(frozen=True)
class AggregatedDataset:
    """n x s table of aggregated values"""
    data: np.ndarray
    names: tuple
    k: int = 1
    normalization: NormalizationSpec = field(default_factory=NormalizationSpec)

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2 or data.shape[1] != len(self.names):
            raise AggregationError(f"data shape {data.shape} does not match {len(self.names)} names")
        if data.shape[0] < 1:
            raise AggregationError("dataset needs at least one row")
        if not np.all(np.isfinite(data)):
            raise AggregationError("dataset contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'names', tuple(self.names))

    @property
    def n(self):
        return self.data.shape[0]

    def index(self, name):
        if isinstance(name, (int, np.integer)):
            return int(name)
        try:
            return self.names.index(name)
        except ValueError:
            raise AggregationError(f"unknown variable '{name}' (have {', '.join(self.names)})")

    def column(self, name):
        return self.data[:, self.index(name)]

    def select(self, names):
        idx = [self.index(v) for v in names]
        return AggregatedDataset(self.data[:, idx], tuple(self.names[i] for i in idx),
                                 self.k, self.normalization)

    def with_columns(self, columns):
        """Append extra named columns (e.g. a single time step next to aggregates)"""
        extra = list(columns)
        if not extra:
            return self
        block = np.column_stack([np.asarray(columns[v], dtype=float) for v in extra])
        return AggregatedDataset(np.hstack([self.data, block]), self.names + tuple(extra),
                                 self.k, self.normalization)

    def to_frame(self):
        frame = pd.DataFrame(self.data, columns=list(self.names))
        frame.insert(0, 'rep', np.arange(self.n))
        return frame


def aggregate_panel(panel, norm=None):
    """output[r][v] = sum_t panel[r][t][v] / g(k)"""
    norm = norm or NormalizationSpec()
    data = panel.data.sum(axis=1) / norm.g(panel.k)
    return AggregatedDataset(data, panel.variables, panel.k, norm)


def aggregate_series(series, k, norm=None, names=None):
    """floor(T/k) non-overlapping windows; the trailing remainder is dropped"""
    norm = norm or NormalizationSpec()
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    T, s = series.shape
    if k < 1:
        raise AggregationError(f"k must be positive, got {k}")
    if T < k:
        raise AggregationError(f"series shorter than one window (T={T}, k={k})")
    windows = T // k
    if T % k:
        log.info(f"Dropping {T % k} trailing step(s) of a length-{T} series")
    data = series[:windows * k].reshape(windows, k, s).sum(axis=1) / norm.g(k)
    names = tuple(names) if names else tuple(f"X{i + 1}" for i in range(s))
    return AggregatedDataset(data, names, k, norm)


def panel_slice(panel, t, suffix=None):
    """Values of every variable at step t (1-based) as a dataset"""
    if not 1 <= t <= panel.k:
        raise AggregationError(f"step {t} outside 1..{panel.k}")
    names = tuple(f"{v}{suffix}" for v in panel.variables) if suffix else panel.variables
    return AggregatedDataset(panel.data[:, t - 1, :], names, 1, NormalizationSpec())


def dataset_to_csv(dataset, path):
    """Header `rep,<var names>`"""
    dataset.to_frame().to_csv(path, index=False, float_format='%.17g')
    log.info(f"Aggregated data written to {path}")


def dataset_from_csv(path, k=1, norm=None):
    """The CSV holds only `rep,<var names>`; k and g(k) come from the caller (default 1, `one`)"""
    frame = pd.read_csv(path, float_precision='round_trip')
    if frame.columns[0] != 'rep':
        raise AggregationError(f"{path}: expected header rep,<variables>")
    return AggregatedDataset(frame.iloc[:, 1:].to_numpy(), tuple(frame.columns[1:]), k,
                             norm or NormalizationSpec())
