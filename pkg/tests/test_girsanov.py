import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab.coefficients import (AllenCahnParams, InitialCondition, allen_cahn_preset,
                                   constant_preset, zero_drift_preset)
from spde_lab.ensemble import Lattice, simulate
from spde_lab.errors import DegenerateWeightsError, DimensionError
from spde_lab.girsanov import (EXP_OVERFLOW, accumulate, ess, ess_from_log, first_crossing,
                               normalized_weights, novikov_estimate, shifted_noise)
from spde_lab.grid_noise import make_grid, sample_noise
from spde_lab.heat_solver import simulate_path

AC = allen_cahn_preset(AllenCahnParams(1.0, 0.75), InitialCondition(0.5, 0.3))


def test_no_drift_gives_unit_density(small_grid):
    cs = zero_drift_preset(1.0, 0.2, InitialCondition(0.5))
    nf = sample_noise(small_grid, 0, 0)
    tr = accumulate(simulate_path(cs, True, small_grid, nf), nf, cs, small_grid)
    assert np.all(tr.log_xi == 0.0) and np.all(tr.r2_accum == 0.0)
    assert all(tr.reached_terminal(n) for n in tr.levels)


def test_constant_ratio_crossing_times():
    # R = 2 on [0, 1]: r2(t) = 4 t, so level 1 is reached at t = 1/4
    g = make_grid(1.0, 1.0, 400, 4)
    cs = constant_preset(0.5, 0.0, 1.0, InitialCondition(0.0))
    nf = sample_noise(g, 1, 0)
    tr = accumulate(simulate_path(cs, True, g, nf), nf, cs, g, levels=(1, 2, 4, 8))
    assert tr.r2_accum[-1] == pytest.approx(4.0, rel=1e-13)
    assert g.t[tr.tau_index(1)] == pytest.approx(0.25)
    assert g.t[tr.tau_index(2)] == pytest.approx(0.5)
    # r2 reaches 4 at T; the crossing slack makes that count as tau_4 = T
    assert tr.reached_terminal(4) and tr.reached_terminal(8)
    expected = 2.0 * nf.increments[:100].sum() - 0.5
    assert tr.stopped_log_xi(1) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("r2,level,idx", [
    ([0, 0.5, 1.0, 2.0], 1.0, 2),
    ([0, 0.5, 1 - 1e-14, 2.0], 1.0, 2),
    ([0, 0.5, 1 - 1e-9, 2.0], 1.0, 3),
    ([0, 0.1, 0.2], 5.0, 2),
])
def test_first_crossing(r2, level, idx):
    assert first_crossing(np.array(r2), level) == idx


@pytest.mark.parametrize("r2,expected,frac", [
    (np.zeros(10), 1.0, 0.0),
    (np.full(7, 2.0), math.e, 0.0),
    (np.array([0.0, 2.0]), (1 + math.e) / 2, 0.0),
    (np.array([0.0, 2 * EXP_OVERFLOW + 1]), math.inf, 0.5),
    (np.array([1500.0, 1500.0]), math.inf, 1.0),
])
def test_novikov_examples(r2, expected, frac):
    d = novikov_estimate(r2)
    assert d.estimate == pytest.approx(expected, rel=1e-14)
    assert d.fraction_overflowed == frac and d.n == r2.size


def test_novikov_large_but_finite():
    d = novikov_estimate(np.array([1400.0]))
    assert d.estimate == pytest.approx(math.exp(700.0), rel=1e-12)


@pytest.mark.parametrize("w,expected", [
    (np.ones(10), 10.0),
    (np.array([0, 0, 3.0]), 1.0),
    (np.array([1.0, 2.0, 3.0]), 36 / 14),
    (np.array([1e300, 1e300]), 2.0),
])
def test_ess_examples(w, expected):
    assert ess(w) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("w", [np.array([]), np.zeros(3), np.array([1.0, -1.0]),
                               np.array([1.0, np.nan])])
def test_ess_degenerate(w):
    with pytest.raises(DegenerateWeightsError):
        ess(w)


@settings(max_examples=100, deadline=None)
@given(lw=st.lists(st.floats(-800, 800), min_size=1, max_size=50), shift=st.floats(-500, 500))
def test_normalized_weights_properties(lw, shift):
    lw = np.array(lw)
    w = normalized_weights(lw)
    assert math.fsum(w) == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)
    # invariant to a common shift of the log-weights
    np.testing.assert_allclose(normalized_weights(lw + shift), w, rtol=1e-9, atol=1e-300)
    assert 1.0 <= ess_from_log(lw) <= lw.size * (1 + 1e-12)


def test_shifted_noise_absorbs_the_drift(small_grid):
    nf = sample_noise(small_grid, 2, 5)
    drifted = simulate_path(AC, True, small_grid, nf)
    moved = shifted_noise(nf, drifted, AC, small_grid)
    free = simulate_path(AC, False, small_grid, moved)
    np.testing.assert_allclose(free.u, drifted.u, rtol=0, atol=1e-8)


def test_direction_identity(small_grid):
    # forward density under the shifted noise is the reciprocal of the reverse one
    nf = sample_noise(small_grid, 2, 6)
    path = simulate_path(AC, True, small_grid, nf)
    rev = accumulate(path, nf, AC, small_grid, sign=-1.0)
    fwd = accumulate(path, shifted_noise(nf, path, AC, small_grid), AC, small_grid)
    np.testing.assert_allclose(fwd.log_xi, -rev.log_xi, rtol=0, atol=1e-10)


def test_accumulate_matches_kernel_sums(small_grid):
    nf = sample_noise(small_grid, 3, 1)
    path = simulate_path(AC, False, small_grid, nf)
    tr = accumulate(path, nf, AC, small_grid)
    np.testing.assert_allclose(tr.log_xi, path.log_xi, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(tr.r2_accum, path.r2_accum, rtol=1e-12, atol=1e-14)


def test_accumulate_rejects_wrong_lattice(small_grid):
    nf = sample_noise(small_grid, 0, 0)
    other = make_grid(0.05, 1.0, 10, 8)
    path = simulate_path(AC, True, other, sample_noise(other, 0, 0))
    with pytest.raises(DimensionError):
        accumulate(path, nf, AC, small_grid)


def _ensemble(coeffs, N, seed, levels=(0.5, 1, 2, 4, 8), threads=1, nt=100, nx=8, T=0.1):
    g = make_grid(T, 1.0, nt, nx)
    return simulate(coeffs, Lattice.from_grid(g), coeffs.h(g.x, g.L), N, seed, False, True,
                    levels, threads=threads)


@pytest.mark.slow
def test_stopped_density_has_unit_mean():
    raw = _ensemble(allen_cahn_preset(AllenCahnParams(0.5, 1.0), InitialCondition(0.5)),
                    20000, 12, levels=(0.1, 0.5, 2))
    for i in range(3):
        w = np.exp(raw.stopped[:, i])
        assert abs(w.mean() - 1) < 4 * w.std() / math.sqrt(w.size)


def test_coverage_is_monotone_in_the_level():
    raw = _ensemble(allen_cahn_preset(AllenCahnParams(0.3, 1.0), InitialCondition(0.5)), 500, 3)
    cov = (raw.tau == 100).mean(axis=0)
    assert np.all(np.diff(cov) >= 0)
    assert np.all(np.diff(raw.tau, axis=1) >= 0)


@pytest.mark.parametrize("threads", [2, 3])
def test_thread_count_does_not_change_results(threads):
    base = _ensemble(AC, 600, 4)
    other = _ensemble(AC, 600, 4, threads=threads)
    for a, b in zip(base.__dict__.values(), other.__dict__.values()):
        assert np.array_equal(a, b)


def test_ensemble_matches_single_paths():
    g = make_grid(0.1, 1.0, 100, 8)
    raw = _ensemble(AC, 5, 9)
    for p in range(5):
        path = simulate_path(AC, False, g, sample_noise(g, 9, p))
        assert np.array_equal(raw.terminal[p], path.terminal)
        assert raw.log_xi_T[p] == path.log_xi[-1]
