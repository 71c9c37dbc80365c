import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab._backend import kernels
from spde_lab.coefficients import (AllenCahnParams, InitialCondition, allen_cahn_preset,
                                   constant_preset)
from spde_lab.errors import InvalidConfigurationError, PathBlowUpError
from spde_lab.grid_noise import make_grid, sample_noise
from spde_lab.heat_solver import (SchemeConfig, laplacian, simulate_path, step,
                                  thomas_factors, weak_form_residual, write_path_csv)


def quiet(h=InitialCondition(0.0)):
    # a = 0, b = 0: pure heat flow
    return constant_preset(0.0, 0.0, 0.0, h)


def test_laplacian_row_sums():
    g = make_grid(1.0, 1.0, 10, 9)
    assert np.abs(laplacian(g, "neumann").sum(axis=1)).max() < 1e-9
    dl = laplacian(g, "dirichlet").sum(axis=1)
    assert dl[0] < 0 and dl[-1] < 0 and np.abs(dl[1:-1]).max() < 1e-9


@pytest.mark.parametrize("nx,dt,dx", [(2, 0.1, 0.5), (5, 1e-3, 0.2), (33, 1.0, 1 / 33)])
@pytest.mark.parametrize("boundary", ["neumann", "dirichlet"])
def test_thomas_solves_the_system(nx, dt, dx, boundary, rng):
    f = thomas_factors(nx, dt, dx, boundary)
    rhs = rng.normal(size=nx)
    # with zero noise and no drift one step is exactly a tridiagonal solve
    out = kernels.step(rhs, np.zeros(nx), dt, dx, f.off, f.cprime, f.denom,
                       quiet().kernel_params(), True)
    np.testing.assert_allclose(f.matrix() @ out, rhs, rtol=0, atol=1e-12 * max(1, abs(f.off)))


@pytest.mark.parametrize("m", [1, 2, 3])
@pytest.mark.parametrize("nt,nx", [(10, 16), (50, 40)])
def test_cosine_mode_decays_at_discrete_rate(m, nt, nx):
    g = make_grid(0.05, 1.0, nt, nx)
    h = InitialCondition(0.0, 1.0, m)
    path = simulate_path(quiet(h), True, g, sample_noise(g, 0, 0))
    lam = 2.0 / g.dx**2 * (1 - np.cos(m * np.pi * g.dx / g.L))
    factor = (1.0 + g.dt * lam) ** -np.arange(nt + 1)
    np.testing.assert_allclose(path.u, factor[:, None] * h(g.x, g.L)[None, :], atol=1e-12)


def test_neumann_mass_balance_is_exact():
    g = make_grid(0.2, 2.0, 100, 20)
    cs = constant_preset(1.5, 0.3, 0.0, InitialCondition(0.2, 0.5, 2))
    nf = sample_noise(g, 4, 1)
    path = simulate_path(cs, True, g, nf)
    mass = path.u.sum(axis=1) * g.dx
    expect = mass[0] + 0.3 * g.L * g.t + 1.5 * np.concatenate([[0], np.cumsum(nf.increments.sum(1))])
    np.testing.assert_allclose(mass, expect, atol=1e-12)


def test_dirichlet_decays():
    g = make_grid(0.5, 1.0, 200, 16)
    path = simulate_path(quiet(InitialCondition(1.0)), True, g, sample_noise(g, 0, 0),
                         boundary="dirichlet")
    peaks = np.abs(path.u).max(axis=1)
    assert np.all(np.diff(peaks) <= 1e-15)
    # zero ghosts: the slowest mode is sin(pi (j+1) / (nx+1)) and dominates late
    lam = 2.0 / g.dx**2 * (1 - np.cos(np.pi / (g.nx + 1)))
    assert peaks[-1] / peaks[-2] == pytest.approx(1 / (1 + g.dt * lam), rel=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), r=st.floats(0.01, 500))
def test_heat_flow_is_a_contraction(seed, r):
    # maximum principle holds at any ratio dt/dx^2 for the implicit Laplacian
    nx = 12
    dx = 1.0 / nx
    g = make_grid(r * dx * dx * 5, 1.0, 5, nx)
    u0 = np.random.default_rng(seed).uniform(-1, 1, nx)
    nf = sample_noise(g, 0, 0).with_increments(np.zeros((5, nx)))
    u = u0
    for k in range(5):
        nxt = step(u, k, nf, quiet(), True, g)
        assert np.abs(nxt).max() <= np.abs(u).max() * (1 + 1e-14)
        u = nxt


def test_drift_flag_bitwise(small_grid):
    nf = sample_noise(small_grid, 3, 2)
    h = InitialCondition(0.5)
    drifted = allen_cahn_preset(AllenCahnParams(1.0, 0.75), h)
    off = simulate_path(drifted, False, small_grid, nf)
    plain = simulate_path(drifted.without_drift(), True, small_grid, nf)
    assert np.array_equal(off.u, plain.u)
    on = simulate_path(drifted, True, small_grid, nf)
    assert not np.array_equal(on.u, off.u)


def test_step_agrees_with_rollout(small_grid):
    nf = sample_noise(small_grid, 5, 0)
    cs = allen_cahn_preset(AllenCahnParams(0.8, 0.5), InitialCondition(0.3, 0.2))
    path = simulate_path(cs, True, small_grid, nf)
    u = cs.h(small_grid.x, small_grid.L)
    for k in range(small_grid.nt):
        u = step(u, k, nf, cs, True, small_grid)
    assert np.array_equal(u, path.terminal)


@pytest.mark.slow
def test_additive_spatial_mean_law():
    # with a = 1 the spatial mean is W(T, L) / L exactly, so Var = T / L
    g = make_grid(0.3, 2.0, 30, 8)
    cs = constant_preset(1.0, 0.0, 0.0, InitialCondition(0.0, 0.4, 1))
    means = np.array([simulate_path(cs, True, g, sample_noise(g, 9, p)).terminal.mean()
                      for p in range(4000)])
    assert abs(means.mean()) < 5 * np.sqrt(g.T / g.L / means.size)
    assert abs(means.var(ddof=1) / (g.T / g.L) - 1) < 5 * np.sqrt(2 / means.size)


def test_blow_up_is_reported():
    g = make_grid(1.0, 1.0, 50, 4)
    cs = constant_preset(1.0, 50.0, 0.0, InitialCondition(0.0))
    with pytest.raises(PathBlowUpError) as ei:
        simulate_path(cs, True, g, sample_noise(g, 0, 0), scheme=SchemeConfig(clamp_bound=10.0))
    assert 1 <= ei.value.k <= 50
    with pytest.raises(PathBlowUpError):
        step(np.array([np.nan, 0, 0, 0]), 0, sample_noise(g, 0, 0), cs, True, g)


def test_scheme_config_validation():
    with pytest.raises(InvalidConfigurationError):
        SchemeConfig(theta=0.5)
    with pytest.raises(InvalidConfigurationError):
        SchemeConfig(clamp_bound=0.1).check_initial(quiet(InitialCondition(1.0)))
    with pytest.raises(InvalidConfigurationError):
        thomas_factors(4, 0.1, 0.25, "periodic")


@pytest.mark.parametrize("m", [0, 1, 2])
def test_weak_residual_is_small(small_grid, m):
    cs = allen_cahn_preset(AllenCahnParams(1.0, 0.75), InitialCondition(0.5, 0.2))
    nf = sample_noise(small_grid, 1, 0)
    path = simulate_path(cs, True, small_grid, nf)
    assert weak_form_residual(path, nf, cs, True, small_grid, m) < 5e-2
    if m == 0:
        # mass balance is exact under Neumann
        assert weak_form_residual(path, nf, cs, True, small_grid, 0) < 1e-12


def test_weak_residual_detects_wrong_drift(small_grid):
    cs = constant_preset(1.0, 0.0, 0.0, InitialCondition(0.5))
    nf = sample_noise(small_grid, 1, 0)
    path = simulate_path(cs, True, small_grid, nf)
    wrong = constant_preset(1.0, 1.0, 0.0, InitialCondition(0.5))
    assert weak_form_residual(path, nf, wrong, True, small_grid, 0) == pytest.approx(
        small_grid.T * small_grid.L, rel=1e-10)


def test_path_csv(small_grid):
    path = simulate_path(quiet(InitialCondition(1.0)), True, small_grid,
                         sample_noise(small_grid, 0, 0))
    buf = io.StringIO()
    write_path_csv(path, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,x,u"
    assert len(lines) == 1 + (small_grid.nt + 1) * small_grid.nx
    t, x, u = map(float, lines[-1].split(","))
    assert t == pytest.approx(small_grid.T) and x == small_grid.x[-1]
    assert u == path.u[-1, -1]
