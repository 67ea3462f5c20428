#!/usr/bin/env python3
"""Tests for the shared settings: option merging, errors and random streams"""

import numpy as np
import pytest

from lab_settings import (CLI_EXIT_CODES, ConfigError, LabError, SpecError, TestError, content_seed,
                          derive_seed, make_rng, merge_options, stable_key)


def test_merge_options_overlays_defaults():
    merged = merge_options({'a': 1, 'b': 2}, {'b': 5}, 'demo')
    assert merged == {'a': 1, 'b': 5}


def test_merge_options_rejects_unknown_key():
    with pytest.raises(ConfigError, match='typo'):
        merge_options({'a': 1}, {'typo': 3}, 'demo')


def test_error_codes_and_exit_kinds():
    assert SpecError("x").exit_kind == 'config'
    assert ConfigError("x").exit_kind == 'config'
    assert TestError("x").exit_kind == 'runtime'
    assert SpecError("x", code='SPEC_CYCLE').code == 'SPEC_CYCLE'
    assert LabError("x").code == 'LAB_ERROR'
    assert CLI_EXIT_CODES['config'] == 2 and CLI_EXIT_CODES['runtime'] == 3


def test_make_rng_needs_a_seed():
    with pytest.raises(ConfigError):
        make_rng(None)


def test_streams_are_reproducible_and_distinct():
    a = make_rng(7, 'noise', 'X').normal(size=5)
    b = make_rng(7, 'noise', 'X').normal(size=5)
    c = make_rng(7, 'noise', 'Y').normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_derive_seed_is_stable_and_key_sensitive():
    assert derive_seed(1, 'cell', 0) == derive_seed(1, 'cell', 0)
    assert derive_seed(1, 'cell', 0) != derive_seed(1, 'cell', 1)
    assert derive_seed(1, 'cell', 0) != derive_seed(2, 'cell', 0)


def test_stable_key_maps_strings_and_rejects_negative_ints():
    assert stable_key('X') == stable_key('X')
    assert stable_key(3) == 3
    with pytest.raises(ConfigError):
        stable_key(-1)


def test_content_seed_follows_contents():
    x = np.arange(6.0)
    assert content_seed(x) == content_seed(x.copy())
    assert content_seed(x) != content_seed(x + 1)
