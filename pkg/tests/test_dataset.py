import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bwim_lab.dataset import (
    NormStats,
    SectionMap,
    SplitSpec,
    build_dataset,
    inject_noise,
    instant_labels,
    label_at,
    normalize,
    slice_windows,
    split,
)
from bwim_lab.errors import ConfigError
from bwim_lab.structure import instant_loads
from bwim_lab.traffic import CaParams, RoadState, TrafficTrajectory, Vehicle, simulate

SECTIONS = SectionMap.uniform(60.0, 16.0, 2.0, target=1)


def road(*vehicles):
    return RoadState.from_vehicles(30, 2.0, [Vehicle(i, 4, w, 0, c) for i, (c, w) in enumerate(vehicles)])


# --- labels -----------------------------------------------------------------

def test_section_map_tiles_the_deck():
    assert SECTIONS.boundaries == (0.0, 16.0, 32.0, 48.0, 60.0)
    assert SECTIONS.span() == (16.0, 32.0)
    with pytest.raises(ConfigError):
        SectionMap.uniform(60.0, 15.0, 2.0)
    with pytest.raises(ConfigError):
        SectionMap((0.0, 10.0), target=1)


def test_labels_threshold_inclusive():
    assert label_at(road((10, 30_000.0)), SECTIONS) == 1  # cell 10 centre = 21 m
    assert label_at(road((10, 29_999.0)), SECTIONS) == 0
    assert label_at(road((10, 20_000.0), (12, 20_000.0)), SECTIONS) == 0
    assert label_at(road((2, 50_000.0)), SECTIONS) == 0


def test_instant_labels_agree_with_state_rule():
    traj = simulate(CaParams(30, 2.0, 4, p_inject=0.6, seed=9), 400)
    loads = instant_loads(traj, 1.0)
    fast = instant_labels(loads, SECTIONS)
    slow = np.array([label_at(traj.state(t), SECTIONS) for t in range(traj.n_ticks)])
    np.testing.assert_array_equal(fast, slow)


# --- normalisation and noise ------------------------------------------------

def test_normalize_hand_example():
    v = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_allclose(normalize(v, NormStats.fit(v))[:, 0], [-1 / 3, 0, 1 / 3])


def test_normalize_constant_and_zero_columns():
    v = np.array([[5.0, 0.0], [5.0, 0.0], [5.0, 0.0]])
    with pytest.warns(RuntimeWarning):
        out = normalize(v, NormStats.fit(v))
    np.testing.assert_array_equal(out, np.zeros((3, 2)))


def test_norm_stats_roundtrip():
    st_ = NormStats.fit(np.random.default_rng(0).normal(size=(20, 3)))
    again = NormStats.from_dict(st_.to_dict())
    np.testing.assert_array_equal(again.mean, st_.mean)
    np.testing.assert_array_equal(again.max_abs, st_.max_abs)


def test_noise_zero_is_identity():
    v = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(inject_noise(v, 0.0, np.random.default_rng(0)), v)


def test_noise_std():
    v = np.zeros((1000, 1000))
    added = inject_noise(v, 0.3, np.random.default_rng(42))
    assert 0.297 <= added.std() <= 0.303
    with pytest.raises(ConfigError):
        inject_noise(v, -0.1, np.random.default_rng(0))


# --- windows and splits -----------------------------------------------------

def test_window_counts():
    assert len(slice_windows(np.zeros((10, 2)), np.zeros(10), 8)) == 3
    s = slice_windows(np.arange(5.0)[:, None], np.zeros(5), 1)
    assert len(s) == 5 and s.windows.shape == (5, 1, 1)


def test_window_content_and_label():
    v = np.arange(20.0).reshape(10, 2)
    y = np.arange(10) % 2
    s = slice_windows(v, y, 4)
    np.testing.assert_array_equal(s[0].window, v[0:4])
    assert s[3].label == y[6] and s[3].end_instant == 6


def test_slicing_is_lossless():
    v = np.random.default_rng(1).normal(size=(50, 3))
    s = slice_windows(v, np.zeros(50), 8)
    np.testing.assert_array_equal(np.concatenate([s.windows[0, :-1], s.windows[:, -1]]), v)


def test_split_examples():
    assert SplitSpec.from_ratios(100_000).sizes == (60_000, 20_000, 20_000)
    assert SplitSpec.from_ratios(10).sizes == (6, 2, 2)
    assert SplitSpec.from_ratios(99_993, n_reference=100_000).sizes == (60_000, 20_000, 19_993)


def test_split_validation():
    with pytest.raises(ConfigError):
        SplitSpec((0, 5), (4, 8), (8, 10))
    s = slice_windows(np.zeros((12, 1)), np.zeros(12), 3)
    with pytest.raises(ConfigError):
        split(s, SplitSpec.from_ratios(9))


@settings(max_examples=40, deadline=None)
@given(n=st.integers(10, 5000), l=st.integers(1, 9))
def test_splits_are_ordered_and_cover(n, l):
    spec = SplitSpec.from_ratios(n - l + 1, n_reference=n)
    (a0, a1), (b0, b1), (c0, c1) = spec.train, spec.val, spec.test
    assert a0 == 0 and a1 == b0 and b1 == c0 and c1 == n - l + 1
    assert min(spec.sizes) >= 0


# --- full build -------------------------------------------------------------

def _raw(n=400, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, 4)) * [1.0, 2.0, 3.0, 4.0] - 5.0, (rng.random(n) < 0.2).astype(np.int8)


def test_stats_come_from_training_range():
    raw, y = _raw()
    ds = build_dataset(raw, y, SECTIONS, window=8)
    n_train = ds.split_spec.train[1]
    ref = NormStats.fit(raw[:n_train + 7])
    np.testing.assert_array_equal(ds.stats.mean, ref.mean)
    np.testing.assert_array_equal(ds.values, normalize(raw, ref))


def test_build_is_deterministic_and_noise_seeded():
    raw, y = _raw()
    a = build_dataset(raw, y, SECTIONS, sigma=0.2, noise_seed=3)
    b = build_dataset(raw, y, SECTIONS, sigma=0.2, noise_seed=3)
    c = build_dataset(raw, y, SECTIONS, sigma=0.2, noise_seed=4)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    clean = build_dataset(raw, y, SECTIONS)
    assert 0.18 < np.std(a.values - clean.values) < 0.22


def test_sample_labels_match_instants():
    raw, y = _raw()
    ds = build_dataset(raw, y, SECTIONS, window=8)
    tr, va, te = ds.splits()
    for part in (tr, va, te):
        np.testing.assert_array_equal(part.labels, y[part.end_instants])


def test_short_series_rejected():
    with pytest.raises(ConfigError):
        build_dataset(np.zeros((5, 2)), np.zeros(5), SECTIONS, window=8)
