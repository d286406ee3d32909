import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from emisr.errors import DegenerateInputError, DomainError, FormatError, InsufficientDataError, StateError
from emisr.grid import EmissionGrid, TransformedGrid
from emisr.transforms import (MaxScaling, QuantileTransform, ScalingTransform, ZeroInverse,
                              apply_quantile, apply_scaling, encode_map, fit_quantile_transform,
                              invert_quantile, invert_scaling, load_transform, read_qtx, write_qtx)


def log_uniform(seed, n, lo=-30, hi=-9):
    return 10.0 ** np.random.default_rng(seed).uniform(lo, hi, n)


def sorted_quantile_oracle(samples, n):
    """Empirical quantile at k/(n-1) via full sort and position interpolation."""
    s = sorted(float(x) for x in samples)
    out = []
    for k in range(n):
        pos = k * (len(s) - 1) / (n - 1)
        i = int(pos)
        j = min(i + 1, len(s) - 1)
        out.append(s[i] + (pos - i) * (s[j] - s[i]))
    return np.array(out)


def test_two_samples_two_quantiles():
    t = fit_quantile_transform(np.array([0.0, 1.0]), 2)
    assert t.quantile_values.tolist() == [0.0, 1.0]


def test_linspace_fit_matches_sort_oracle():
    x = np.linspace(0, 1, 10001)
    t = fit_quantile_transform(x, 1001)
    assert np.max(np.abs(t.quantile_values - np.linspace(0, 1, 1001))) < 1e-3
    assert np.max(np.abs(t.quantile_values - sorted_quantile_oracle(x, 1001))) < 1e-15


def test_fit_matches_sort_oracle_on_shuffled_log_data():
    x = log_uniform(5, 7919)
    t = fit_quantile_transform(x, 1000)
    np.testing.assert_allclose(t.quantile_values, sorted_quantile_oracle(x, 1000), rtol=1e-12)


def test_median_maps_to_half():
    x = log_uniform(1, 100_000)
    t = fit_quantile_transform(x, 1000)
    assert 0.49 <= float(t.forward(np.median(x))) <= 0.51


def test_fit_errors():
    with pytest.raises(InsufficientDataError):
        fit_quantile_transform(np.ones(10), 1000)
    with pytest.raises(DomainError):
        fit_quantile_transform(np.array([0.0, -1.0, 1.0]), 2)


def test_unfitted_use_is_state_error():
    t = QuantileTransform()
    with pytest.raises(StateError):
        t.forward(np.zeros(3))
    with pytest.raises(StateError):
        t.inverse(np.zeros(3))


def test_end_points():
    x = log_uniform(2, 5000)
    t = fit_quantile_transform(x, 1000)
    q = t.quantile_values
    g = EmissionGrid.from_array(np.full((3, 3), q[0]))
    assert np.all(apply_quantile(t, g).values == 0.0)
    assert float(t.forward(q[-1])) == 1.0
    assert float(t.forward(q[0] / 2)) == 0.0
    assert float(t.forward(1e-9)) == 1.0
    zeros = TransformedGrid(np.zeros((2, 2)), t.transform_id)
    ones = TransformedGrid(np.ones((2, 2)), t.transform_id)
    assert np.all(invert_quantile(t, zeros).values == q[0])
    assert np.all(invert_quantile(t, ones).values == q[-1])


def test_forward_matches_rank_oracle():
    fit = log_uniform(3, 4000)
    t = fit_quantile_transform(fit, 1000)
    probe = log_uniform(4, 500, -29.5, -9.5)
    s = np.sort(fit)
    ranks = np.array([np.searchsorted(s, v) for v in probe]) / (s.size - 1)
    assert np.max(np.abs(t.forward(probe) - ranks)) < 2 / 1000


def test_round_trip_on_increasing_segments():
    t = fit_quantile_transform(log_uniform(6, 50_000), 1000)
    q = t.quantile_values
    x = log_uniform(7, 10_000, np.log10(q[0]), np.log10(q[-1]))
    back = t.inverse(t.forward(x))
    assert np.max(np.abs(back - x) / x) < 1e-3


def test_tie_midpoint():
    # 40% zeros: quantiles 0..399 are tied at 0
    data = np.concatenate([np.zeros(4000), log_uniform(8, 6000)])
    t = fit_quantile_transform(data, 1000)
    q = t.quantile_values
    n_tied = int(np.count_nonzero(q == 0.0))
    assert float(t.forward(0.0)) == pytest.approx(0.5 * (n_tied - 1) / 999, abs=1e-15)


@pytest.mark.parametrize("run", [2, 3])
def test_short_tied_runs_round_trip_in_transformed_domain(run):
    q = np.arange(20, dtype=float)
    q[10:10 + run] = 10.0
    q = np.maximum.accumulate(q)
    t = QuantileTransform(q)
    u = np.linspace(0, 1, 401)
    assert np.max(np.abs(t.forward(t.inverse(u)) - u)) <= 2 / q.size


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.integers(20, 200), elements=st.floats(0, 1e-9)),
       st.lists(st.floats(0, 2e-9), min_size=2, max_size=30))
def test_monotone_and_in_range(fit, probe):
    t = fit_quantile_transform(fit, 10)
    p = np.sort(np.array(probe))
    out = t.forward(p)
    assert np.all((out >= 0) & (out <= 1))
    assert np.all(np.diff(out) >= 0)
    assert np.all(t.inverse(np.linspace(0, 1, 17)) >= 0)


def test_inverse_domain_error():
    t = fit_quantile_transform(np.linspace(0, 1, 100), 10)
    with pytest.raises(DomainError):
        t.inverse(np.array([1.5]))
    with pytest.raises(DomainError):
        t.inverse(np.array([-0.1]))


def test_qtx_round_trip(tmp_path):
    t = fit_quantile_transform(log_uniform(9, 3000), 1000)
    write_qtx(t, tmp_path / "t.qtx")
    back = read_qtx(tmp_path / "t.qtx")
    assert back.quantile_values.tobytes() == t.quantile_values.tobytes()
    assert back.transform_id == t.transform_id
    write_qtx(back, tmp_path / "u.qtx")
    assert (tmp_path / "u.qtx").read_bytes() == (tmp_path / "t.qtx").read_bytes()
    (tmp_path / "bad.qtx").write_bytes(b"QTX1" + b"\x05\x00\x00\x00" + b"\x00" * 8)
    with pytest.raises(FormatError):
        read_qtx(tmp_path / "bad.qtx")


def test_scaling_max_is_one_and_stores_max():
    v = np.zeros((4, 4))
    v[1, 1], v[2, 3] = 4e-10, 1e-12
    tg, st_ = apply_scaling(EmissionGrid.from_array(v))
    assert tg.values.max() == 1.0
    assert st_.stored_max == 4e-10


def test_scaling_constant_and_inverse_examples():
    tg, _ = apply_scaling(EmissionGrid.from_array(np.full((3, 3), 2e-11)))
    assert np.all(tg.values == 1.0)
    t = ScalingTransform(1e-9)
    assert np.all(invert_scaling(t, TransformedGrid(np.ones((2, 2)), "s")).values == 1e-9)
    assert np.all(invert_scaling(t, TransformedGrid(np.zeros((2, 2)), "s")).values == 0.0)


def test_scaling_all_zero_is_degenerate():
    with pytest.raises(DegenerateInputError):
        apply_scaling(EmissionGrid.from_array(np.zeros((2, 2))))
    x, inv = encode_map(MaxScaling(), np.zeros((2, 2)))
    assert isinstance(inv, ZeroInverse)
    assert not x.any() and not inv.inverse(np.ones((2, 2))).any()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 6), elements=st.one_of(st.just(0.0), st.floats(1e-30, 1e-9))))
def test_scaling_round_trip_within_one_ulp(values):
    if not values.max() > 0:
        return
    g = EmissionGrid.from_array(values)
    tg, t = apply_scaling(g)
    back = invert_scaling(t, tg).values
    assert np.all(np.abs(back - values) <= np.spacing(values))


def test_load_transform(tmp_path):
    assert isinstance(load_transform("scaling"), MaxScaling)
    t = fit_quantile_transform(np.linspace(0, 1, 50), 10)
    write_qtx(t, tmp_path / "t.qtx")
    assert load_transform(str(tmp_path / "t.qtx")).transform_id == t.transform_id
