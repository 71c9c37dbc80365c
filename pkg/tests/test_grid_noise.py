import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab.errors import DimensionError, InvalidConfigurationError
from spde_lab.grid_noise import (derive_seed, ito_integral, l2_integral, make_grid,
                                 sample_noise, stream_key)


@pytest.mark.parametrize("T,L,nt,nx,dt,dx", [
    (1.0, 1.0, 100, 50, 0.01, 0.02),
    (0.1, 2.0, 1000, 32, 1e-4, 0.0625),
    (2.0, 3.0, 4, 3, 0.5, 1.0),
])
def test_make_grid_spacings(T, L, nt, nx, dt, dx):
    g = make_grid(T, L, nt, nx)
    assert g.dt == pytest.approx(dt, rel=1e-15)
    assert g.dx == pytest.approx(dx, rel=1e-15)
    assert g.x[0] == pytest.approx(dx / 2) and g.x[-1] == pytest.approx(L - dx / 2)
    assert g.t[-1] == pytest.approx(T)


@pytest.mark.parametrize("args,key", [
    ((0.0, 1.0, 10, 10), "T"),
    ((1.0, -1.0, 10, 10), "L"),
    ((1.0, 1.0, 0, 10), "nt"),
    ((1.0, 1.0, 10, 1), "nx"),
    ((float("nan"), 1.0, 10, 10), "T"),
])
def test_make_grid_rejects(args, key):
    with pytest.raises(InvalidConfigurationError) as ei:
        make_grid(*args)
    assert ei.value.key == key


@pytest.mark.parametrize("x0,cell", [(0.0, 0), (0.5, 5), (0.549, 5), (1.0, 9), (0.999, 9)])
def test_cell_index(x0, cell):
    assert make_grid(1.0, 1.0, 10, 10).cell_index(x0) == cell


def test_noise_is_reproducible_and_path_addressed(small_grid):
    a = sample_noise(small_grid, 7, 3).increments
    assert np.array_equal(a, sample_noise(small_grid, 7, 3).increments)
    assert not np.array_equal(a, sample_noise(small_grid, 7, 4).increments)
    assert not np.array_equal(a, sample_noise(small_grid, 8, 3).increments)
    with pytest.raises(ValueError):
        a[0, 0] = 1.0


def test_seed_helpers_are_distinct():
    keys = {stream_key(s) for s in range(1000)}
    assert len(keys) == 1000
    kids = {derive_seed(5, r) for r in range(1000)}
    assert len(kids) == 1000 and 5 not in kids


@pytest.mark.slow
def test_cell_variance_and_sheet_variance():
    g = make_grid(0.5, 2.0, 40, 16)
    n = 4000
    inc = np.stack([sample_noise(g, 11, p).increments for p in range(n)])
    # cell variance dt*dx; standard error of a variance estimate is about sqrt(2/n_total)
    rel = inc.var() / g.cell_area
    assert abs(rel - 1) < 5 * np.sqrt(2 / inc.size)
    WTL = inc.sum(axis=(1, 2))
    assert abs(WTL.var(ddof=1) / (g.T * g.L) - 1) < 5 * np.sqrt(2 / n)
    assert abs(inc.mean()) < 5 * g.noise_scale / np.sqrt(inc.size)


def test_sheet_corner_is_total(small_grid):
    nf = sample_noise(small_grid, 1, 0)
    W = nf.sheet()
    assert W.shape == (small_grid.nt + 1, small_grid.nx + 1)
    assert W[0].max() == 0 and W[:, 0].max() == 0
    assert W[-1, -1] == pytest.approx(nf.increments.sum(), rel=1e-12, abs=1e-14)


def test_ito_constant_integrand_is_sheet_total(small_grid):
    nf = sample_noise(small_grid, 2, 9)
    assert ito_integral(3.0, nf) == pytest.approx(3.0 * nf.increments.sum(), rel=1e-12)


@pytest.mark.slow
def test_ito_isometry():
    g = make_grid(0.2, 1.0, 20, 8)
    f = np.cos(np.outer(g.t[:-1], np.ones(g.nx)) + g.x)
    vals = np.array([ito_integral(f, sample_noise(g, 4, p)) for p in range(20000)])
    target = l2_integral(f, g)
    assert abs(vals.mean()) < 5 * np.sqrt(target / vals.size)
    assert abs(vals.var() / target - 1) < 5 * np.sqrt(2 / vals.size)


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 2**32))
def test_ito_is_linear(a, b, seed):
    g = make_grid(0.1, 1.0, 6, 5)
    nf = sample_noise(g, seed, 0)
    rng = np.random.default_rng(seed)
    f1, f2 = rng.normal(size=(2, g.nt, g.nx))
    lhs = ito_integral(a * f1 + b * f2, nf)
    rhs = a * ito_integral(f1, nf) + b * ito_integral(f2, nf)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("c,T,L", [(1.0, 1.0, 1.0), (2.0, 0.5, 3.0), (0.0, 1.0, 1.0)])
def test_l2_of_constant(c, T, L):
    g = make_grid(T, L, 10, 7)
    assert l2_integral(c, g) == pytest.approx(c * c * T * L, rel=1e-13)


def test_l2_partial_horizon():
    g = make_grid(1.0, 1.0, 10, 4)
    assert l2_integral(1.0, g, 5) == pytest.approx(0.5)
    assert l2_integral(1.0, g, 0) == 0.0
    with pytest.raises(DimensionError):
        l2_integral(1.0, g, 11)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 1000), lam=st.floats(-100, 100), cut=st.integers(0, 8))
def test_l2_additive_and_homogeneous(seed, lam, cut):
    g = make_grid(1.0, 1.0, 8, 3)
    f = np.random.default_rng(seed).normal(size=(g.nt, g.nx))
    total = l2_integral(f, g)
    head = l2_integral(f, g, cut)
    tail = float(np.sum(f[cut:] ** 2) * g.cell_area)
    assert head + tail == pytest.approx(total, rel=1e-12)
    assert l2_integral(lam * f, g) == pytest.approx(lam * lam * total, rel=1e-9, abs=1e-300)


def test_shape_mismatch_raises(small_grid):
    nf = sample_noise(small_grid, 0, 0)
    with pytest.raises(DimensionError):
        ito_integral(np.ones((small_grid.nt + 1, small_grid.nx)), nf)
    with pytest.raises(DimensionError):
        l2_integral(np.ones((2, 2)), small_grid)
    with pytest.raises(DimensionError):
        nf.with_increments(np.ones((1, 1)))
