import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emisr.errors import DomainError
from emisr.resample import (ResampleSpec, bicubic_resample, clamp_non_negative, interpolate_at,
                            resample_matrix)


def keys(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x ** 3 - (a + 3) * x ** 2 + 1
    if x < 2:
        return a * x ** 3 - 5 * a * x ** 2 + 8 * a * x - 4 * a
    return 0.0


def direct_sample(grid, y, x):
    """Bicubic value at source coordinate (y, x) by explicit 4x4 tap summation."""
    h, w = grid.shape
    total = 0.0
    for m in range(math.floor(y) - 1, math.floor(y) + 3):
        for n in range(math.floor(x) - 1, math.floor(x) + 3):
            mm = min(max(m, 0), h - 1)
            nn = min(max(n, 0), w - 1)
            total += keys(y - m) * keys(x - n) * grid[mm, nn]
    return total


def direct_resample(grid, factor):
    h, w = grid.shape
    oh = math.floor(h * factor + Fraction(1, 2))
    ow = math.floor(w * factor + Fraction(1, 2))
    out = np.empty((oh, ow))
    for i in range(oh):
        y = (i + 0.5) * h / oh - 0.5
        for j in range(ow):
            out[i, j] = direct_sample(grid, y, (j + 0.5) * w / ow - 0.5)
    return out


@pytest.mark.parametrize("factor", [Fraction(1, 4), Fraction(1, 2), 2, 4])
@pytest.mark.parametrize("seed", [0, 1])
def test_matches_direct_oracle(factor, seed):
    rng = np.random.default_rng(seed)
    h, w = rng.integers(4, 33, 2) if factor >= 1 else (32, 28)
    grid = rng.random((h, w))
    got = bicubic_resample(grid, ResampleSpec(factor))
    assert np.max(np.abs(got - direct_resample(grid, factor))) < 1e-12


def test_impulse_shifted_phase():
    grid = np.zeros((17, 17))
    grid[8, 8] = 1.0
    coords = np.arange(17) + 0.37
    got = interpolate_at(grid, coords, coords)
    want = np.array([[direct_sample(grid, y, x) for x in coords] for y in coords])
    assert np.max(np.abs(got - want)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-12, 1e3), st.integers(4, 40), st.integers(4, 40),
       st.sampled_from([Fraction(1, 4), Fraction(1, 2), Fraction(2, 3), 1, 2, 3, 4]),
       st.booleans())
def test_partition_of_unity(c, h, w, factor, antialias):
    out = bicubic_resample(np.full((h, w), c), ResampleSpec(factor, antialias=antialias))
    assert np.max(np.abs(out - c)) <= 1e-12 * max(c, 1.0)


def test_patch_dims():
    assert bicubic_resample(np.ones((64, 64)), Fraction(1, 4)).shape == (16, 16)
    assert np.allclose(bicubic_resample(np.full((64, 64), 3.0), Fraction(1, 4)), 3.0, atol=1e-12)


def test_identity_factor():
    x = np.random.default_rng(2).random((9, 11))
    assert np.max(np.abs(bicubic_resample(x, 1) - x)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_separability(seed):
    rng = np.random.default_rng(seed)
    x = rng.random((rng.integers(4, 20), rng.integers(4, 20)))
    r = resample_matrix(x.shape[0], 2 * x.shape[0])
    c = resample_matrix(x.shape[1], 3 * x.shape[1])
    assert np.max(np.abs((r @ x) @ c.T - r @ (x @ c.T))) < 1e-12


@pytest.mark.parametrize("alpha", [2, 4])
def test_bilinear_ramp_survives_down_up(alpha):
    i, j = np.mgrid[0:64, 0:64].astype(float)
    ramp = 1.0 + 0.3 * i + 0.2 * j + 0.01 * i * j
    back = bicubic_resample(bicubic_resample(ramp, Fraction(1, alpha)), alpha)
    inner = slice(4 * alpha, 64 - 4 * alpha)
    rel = np.abs(back[inner, inner] - ramp[inner, inner]) / ramp[inner, inner]
    assert rel.max() < 1e-6


def test_antialias_rows_normalised_and_wider():
    m = resample_matrix(64, 16, antialias=True)
    assert np.allclose(m.sum(axis=1), 1.0, atol=1e-12)
    assert np.count_nonzero(m[8]) > np.count_nonzero(resample_matrix(64, 16)[8])


def test_matrix_is_read_only():
    with pytest.raises(ValueError):
        resample_matrix(8, 4)[0, 0] = 1.0


@pytest.mark.parametrize("bad", [0, -1])
def test_invalid_factor(bad):
    with pytest.raises(DomainError):
        ResampleSpec(bad)


def test_empty_input():
    with pytest.raises(DomainError):
        bicubic_resample(np.zeros((0, 4)), 2)


def test_clamp():
    x = np.array([[1.0, -1e-15], [0.0, 2.5]])
    assert clamp_non_negative(x).tolist() == [[1.0, 0.0], [0.0, 2.5]]
    y = np.random.default_rng(0).random((4, 4)) + 0.1
    assert np.array_equal(clamp_non_negative(y), y)
