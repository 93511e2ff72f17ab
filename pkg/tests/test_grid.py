import numpy as np
import pytest

from freqcast.errors import InvalidInputError, ShapeError
from freqcast.grid import (
    GridField,
    HistoryWindow,
    NormStats,
    compute_norm_stats,
    denormalize,
    normalize,
)


def make_field(values, var_names=None):
    values = np.asarray(values, dtype=np.float64)
    V, M, N = values.shape
    lats = np.linspace(90 - 90 / M, -90 + 90 / M, M)
    lons = np.arange(N) * (360.0 / N)
    return GridField(values, var_names or tuple(f"v{i}" for i in range(V)), lats, lons)


def window_of(fields):
    return HistoryWindow(tuple(fields), np.arange(len(fields), dtype=float))


def test_constant_window_stats():
    f = make_field(np.full((1, 2, 2), 5.0))
    stats = compute_norm_stats(window_of([f, f]))
    assert stats.mu == pytest.approx([5.0])
    assert stats.sigma == pytest.approx([0.0])


def test_hand_computed_population_std():
    # single 1x2x2 field {1,2,3,4}: mu = 2.5, population var = 1.25
    f = make_field([[[1.0, 2.0], [3.0, 4.0]]])
    stats = compute_norm_stats(window_of([f]))
    assert stats.mu[0] == pytest.approx(2.5, abs=1e-15)
    assert stats.sigma[0] == pytest.approx(np.sqrt(1.25), abs=1e-15)


def test_stats_match_loop_oracle():
    rng = np.random.default_rng(7)
    fields = [make_field(rng.normal(size=(3, 4, 5))) for _ in range(4)]
    stats = compute_norm_stats(window_of(fields))
    data = np.stack([f.values for f in fields])
    for v in range(3):
        entries = [data[l, v, m, n] for l in range(4) for m in range(4) for n in range(5)]
        mu = sum(entries) / len(entries)
        var = sum((e - mu) ** 2 for e in entries) / len(entries)
        assert stats.mu[v] == pytest.approx(mu, rel=1e-12)
        assert stats.sigma[v] == pytest.approx(np.sqrt(var), rel=1e-12)


def test_nan_rejected_at_construction():
    bad = np.ones((1, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(InvalidInputError):
        make_field(bad)


def test_normalize_constant_field_is_zero():
    f = make_field(np.full((1, 2, 2), 5.0))
    stats = NormStats(mu=np.array([5.0]), sigma=np.array([0.0]), epsilon=1e-6)
    out = normalize(f, stats)
    assert np.all(out.values == 0.0)


def test_normalize_scalar_oracle():
    f = make_field([[[1.0, 2.0], [3.0, 4.0]]])
    stats = NormStats(mu=np.array([2.5]), sigma=np.array([np.sqrt(1.25)]), epsilon=1e-6)
    out = normalize(f, stats)
    for m in range(2):
        for n in range(2):
            expected = (f.values[0, m, n] - 2.5) / (np.sqrt(1.25) + 1e-6)
            assert out.values[0, m, n] == pytest.approx(expected, rel=1e-15)


def test_denormalize_zeros_gives_mu():
    f = make_field(np.zeros((1, 2, 2)))
    stats = NormStats(mu=np.array([5.0]), sigma=np.array([2.0]))
    assert np.all(denormalize(f, stats).values == 5.0)


def test_identity_stats_with_zero_like_epsilon():
    f = make_field(np.arange(8.0).reshape(1, 2, 4))
    stats = NormStats(mu=np.array([0.0]), sigma=np.array([1.0]), epsilon=1e-300)
    assert np.allclose(denormalize(f, stats).values, f.values, rtol=1e-12)


def test_round_trip_properties():
    rng = np.random.default_rng(3)
    for _ in range(20):
        V, M, N = rng.integers(1, 4), rng.integers(2, 8), rng.integers(2, 8)
        f = make_field(rng.normal(loc=rng.normal(), scale=rng.uniform(0.5, 3), size=(V, M, N)))
        stats = compute_norm_stats(window_of([f]))
        roundtrip = denormalize(normalize(f, stats), stats)
        assert np.allclose(roundtrip.values, f.values, rtol=1e-9, atol=1e-12)
        other = normalize(denormalize(f, stats), stats)
        assert np.allclose(other.values, f.values, rtol=1e-9, atol=1e-12)
        assert roundtrip.shape == f.shape


def test_stats_of_normalized_window_are_centered():
    rng = np.random.default_rng(11)
    fields = [make_field(rng.normal(2.0, 3.0, size=(2, 4, 4))) for _ in range(3)]
    win = window_of(fields)
    stats = compute_norm_stats(win, epsilon=1e-12)
    normed = [normalize(f, stats) for f in fields]
    re_stats = compute_norm_stats(window_of(normed))
    assert np.all(np.abs(re_stats.mu) <= 1e-9)


def test_variable_count_mismatch():
    f = make_field(np.zeros((2, 2, 2)))
    stats = NormStats(mu=np.array([0.0]), sigma=np.array([1.0]))
    with pytest.raises(ShapeError):
        normalize(f, stats)
    with pytest.raises(ShapeError):
        denormalize(f, stats)


def test_grid_field_validation():
    with pytest.raises(InvalidInputError):
        make_field(np.zeros((1, 1, 2)))  # M too small
    with pytest.raises(InvalidInputError):
        GridField(np.zeros((1, 2, 2)), ("a",), np.array([95.0, 0.0]), np.array([0.0, 180.0]))
    with pytest.raises(InvalidInputError):
        GridField(np.zeros((1, 2, 2)), ("a",), np.array([10.0, 0.0]), np.array([0.0, 360.0]))
    with pytest.raises(InvalidInputError):
        GridField(np.zeros((1, 2, 2)), ("a",), np.array([0.0, 0.0]), np.array([0.0, 180.0]))


def test_window_validation():
    f = make_field(np.zeros((1, 2, 2)))
    with pytest.raises(InvalidInputError):
        HistoryWindow((), np.array([]))
    with pytest.raises(InvalidInputError):
        HistoryWindow((f, f), np.array([1.0, 1.0]))  # non-increasing times
    g = make_field(np.zeros((1, 2, 4)))
    with pytest.raises(ShapeError):
        HistoryWindow((f, g), np.array([0.0, 1.0]))
