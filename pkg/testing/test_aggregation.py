#!/usr/bin/env python3
"""Tests for the aggregation operator"""

import numpy as np
import pytest

from aggregation import (AggregatedDataset, NormalizationSpec, aggregate_panel, aggregate_series,
                         dataset_from_csv, dataset_to_csv, panel_slice)
from lab_settings import AggregationError, SpecError
from scm_generators import Panel, fork_model, simulate_aligned


def _panel(rng, n=50, k=4, s=2):
    return Panel(rng.normal(size=(n, k, s)), ('A', 'B'), k)


def test_normalizations():
    assert NormalizationSpec('one').g(4) == 1.0
    assert NormalizationSpec('k').g(4) == 4.0
    assert NormalizationSpec('sqrt_k').g(4) == 2.0
    with pytest.raises(SpecError):
        NormalizationSpec('log')


def test_k_one_returns_the_single_slice():
    panel = simulate_aligned(fork_model(), 1, 100, seed=1)
    data = aggregate_panel(panel)
    assert np.array_equal(data.data, panel.data[:, 0, :])
    assert data.names == ('X', 'Y', 'Z')


def test_k_two_sums_both_steps():
    panel = simulate_aligned(fork_model(), 2, 100, seed=2)
    data = aggregate_panel(panel)
    assert np.array_equal(data.column('X'), panel.series('X')[:, 0] + panel.series('X')[:, 1])


def test_norm_k_gives_the_window_mean(rng):
    panel = _panel(rng)
    data = aggregate_panel(panel, NormalizationSpec('k'))
    row = panel.data[7]
    assert data.data[7, 0] == pytest.approx((row[0, 0] + row[1, 0] + row[2, 0] + row[3, 0]) / 4)


def test_linearity_and_scaling(rng):
    p, q = _panel(rng), _panel(rng)
    combined = Panel(2.0 * p.data - 3.0 * q.data, p.variables, p.k)
    lhs = aggregate_panel(combined).data
    rhs = 2.0 * aggregate_panel(p).data - 3.0 * aggregate_panel(q).data
    assert np.allclose(lhs, rhs, atol=1e-12)
    assert np.allclose(aggregate_panel(p).data, 4 * aggregate_panel(p, NormalizationSpec('k')).data)


def test_series_window_count_and_remainder():
    series = np.arange(11.0)
    assert aggregate_series(series[:10], 5).n == 2
    data = aggregate_series(series, 5)
    assert data.n == 2
    assert data.data[:, 0].tolist() == [10.0, 35.0]


def test_series_shorter_than_a_window():
    with pytest.raises(AggregationError, match='series shorter than one window'):
        aggregate_series(np.zeros((3, 2)), 5)


def test_series_matches_panel_reshape(rng):
    n, k = 30, 4
    series = rng.normal(size=(n * k, 2))
    via_series = aggregate_series(series, k, NormalizationSpec('sqrt_k'), ('A', 'B'))
    via_panel = aggregate_panel(Panel(series.reshape(n, k, 2), ('A', 'B'), k), NormalizationSpec('sqrt_k'))
    assert np.allclose(via_series.data, via_panel.data, atol=1e-12)


def test_dataset_helpers():
    data = AggregatedDataset(np.arange(6.0).reshape(3, 2), ('A', 'B'))
    assert data.select(['B']).names == ('B',)
    wider = data.with_columns({'C': [1.0, 2.0, 3.0]})
    assert wider.names == ('A', 'B', 'C')
    assert wider.column('C').tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(AggregationError):
        data.column('Q')
    with pytest.raises(AggregationError):
        AggregatedDataset([[np.nan, 1.0]], ('A', 'B'))


def test_panel_slice_takes_one_step():
    panel = simulate_aligned(fork_model(), 3, 10, seed=4)
    first = panel_slice(panel, 1, suffix='1')
    assert first.names == ('X1', 'Y1', 'Z1')
    assert np.array_equal(first.column('Y1'), panel.series('Y')[:, 0])
    with pytest.raises(AggregationError):
        panel_slice(panel, 4)


def test_dataset_csv_round_trip(tmp_path):
    data = aggregate_panel(simulate_aligned(fork_model(), 2, 25, seed=3))
    path = tmp_path / 'data.csv'
    dataset_to_csv(data, path)
    assert path.read_text().splitlines()[0] == 'rep,X,Y,Z'
    back = dataset_from_csv(path, k=2)
    assert back.names == data.names
    assert np.array_equal(back.data, data.data)
    assert back.k == 2
    plain = dataset_from_csv(path)
    assert (plain.k, plain.normalization.kind) == (1, 'one')
