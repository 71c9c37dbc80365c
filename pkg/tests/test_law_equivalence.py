import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spde_lab.coefficients import (AllenCahnParams, InitialCondition, allen_cahn_preset,
                                   constant_preset, zero_drift_preset)
from spde_lab.errors import (ComputationError, InsufficientCoverageError,
                             InvalidConfigurationError)
from spde_lab.grid_noise import make_grid
from spde_lab.heat_solver import SchemeConfig
from spde_lab.law_equivalence import (EnsembleResult, Functional, arm_seeds, compare,
                                      compare_levels, default_functionals, run_direct,
                                      run_reweighted, stopped_martingale_mean, tau_coverage,
                                      weighted_ks)

GRID = make_grid(0.1, 1.0, 100, 8)
AC = allen_cahn_preset(AllenCahnParams(1.0, 0.75), InitialCondition(0.5, 0.2))


@pytest.mark.parametrize("text,kind,x0,name", [
    ("point_value@0.5", "point_value", 0.5, "point_value@0.5"),
    ("point_value(0.25)", "point_value", 0.25, "point_value@0.25"),
    ("spatial_mean", "spatial_mean", None, "spatial_mean"),
    (" l2_norm ", "l2_norm", None, "l2_norm"),
])
def test_functional_parse(text, kind, x0, name):
    f = Functional.parse(text)
    assert (f.kind, f.x0, f.name) == (kind, x0, name)
    assert Functional.parse(f.name) == f


@pytest.mark.parametrize("text", ["point_value", "mean", "spatial_max@0.5"])
def test_functional_parse_rejects(text):
    with pytest.raises(InvalidConfigurationError):
        Functional.parse(text)


def test_functional_values():
    u = np.array([[1.0, -2.0, 3.0, 0.0]])
    dx = 0.25
    vals = {f.name: float(f.evaluate(u, dx, 1.0)[0]) for f in default_functionals(1.0)}
    assert vals == {"point_value@0.5": 3.0, "spatial_mean": 0.5, "spatial_max": 3.0,
                    "l2_norm": pytest.approx(math.sqrt(14 * 0.25))}
    assert Functional("point_value", 1.0).evaluate(u, dx, 1.0)[0] == 0.0


@pytest.mark.parametrize("x1,w1,x2,w2,d", [
    ([1, 2, 3], [1, 1, 1], [1, 2, 3], [1, 1, 1], 0.0),
    ([1, 2], [1, 1], [3, 4], [1, 1], 1.0),
    ([1, 2], [3, 1], [1, 2], [1, 1], 0.25),
    ([0, 0, 1], [1, 1, 1], [0, 1, 1], [1, 1, 1], 1 / 3),
])
def test_weighted_ks_examples(x1, w1, x2, w2, d):
    assert weighted_ks(x1, w1, x2, w2) == pytest.approx(d, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(5, 60), seed=st.integers(0, 10**6))
def test_weighted_ks_unit_weights_matches_scipy(n, seed):
    from scipy.stats import ks_2samp
    rng = np.random.default_rng(seed)
    x1 = rng.normal(size=n).round(1)
    x2 = rng.normal(size=n + 3).round(1)
    assert weighted_ks(x1, np.ones(n), x2, np.ones(n + 3)) == pytest.approx(
        ks_2samp(x1, x2).statistic, abs=1e-12)


def test_arm_seeds():
    d, r = arm_seeds(5, 0)
    assert d != r
    assert arm_seeds(5, 0, shared=True) == (d, d)
    assert len({s for rep in range(20) for s in arm_seeds(5, rep)}) == 40


def test_driftless_reweighting_has_unit_weights():
    cs = zero_drift_preset(1.0, 0.0, InitialCondition(0.5))
    rew = run_reweighted(cs, GRID, 300, 2)
    assert np.all(rew.stopped_log_xi == 0.0) and rew.tau_at_T.all()
    direct = run_direct(cs, GRID, 300, 2)
    # same seed, no drift: identical paths
    for k in direct.values:
        assert np.array_equal(direct.values[k], rew.values[k])


def test_self_comparison_is_exactly_null():
    direct = run_direct(AC, GRID, 400, 3)
    rep = compare(direct, direct, 32, bootstrap=50)
    for s in rep.functionals:
        assert s.z == 0.0 and s.ks_stat == 0.0 and s.ks_pvalue == 1.0
    assert rep.ess == pytest.approx(400) and rep.coverage_direct == 1.0


def test_shared_seed_null_drift_comparison_is_exact():
    cs = zero_drift_preset(1.0, 0.1, InitialCondition(0.3))
    d, r = arm_seeds(0, 0, shared=True)
    rep = compare(run_direct(cs, GRID, 300, d), run_reweighted(cs, GRID, 300, r), 1,
                  bootstrap=40)
    assert rep.max_abs_z == 0.0 and rep.min_ks_pvalue == 1.0


@pytest.mark.slow
def test_constant_drift_mean_is_recovered():
    # a = 1, d = 1, h = 0: spatial mean = T + W(T, L) / L under the drifted law
    g = make_grid(0.5, 1.0, 50, 4)
    cs = constant_preset(1.0, 0.0, 1.0)
    fs = [Functional("spatial_mean")]
    rew = run_reweighted(cs, g, 20_000, 7, fs, levels=(1,))
    w = np.exp(rew.stopped_log_xi[:, 0])
    x = rew.values["spatial_mean"]
    est = np.mean(w * x)
    assert abs(est - g.T) < 4 * np.std(w * x) / math.sqrt(x.size)
    rep = compare(run_direct(cs, g, 20_000, 8, fs, levels=(1,)), rew, 1, bootstrap=200)
    assert abs(rep.max_abs_z) < 4 and rep.min_ks_pvalue > 0.001


@pytest.mark.slow
def test_mismatched_drift_is_rejected():
    g = make_grid(0.5, 1.0, 50, 4)
    cs = constant_preset(1.0, 0.0, 1.0)
    fs = [Functional("spatial_mean")]
    wrong = run_reweighted(cs.scaled_drift(0.0), g, 5000, 1, fs, levels=(1,))
    rep = compare(run_direct(cs, g, 5000, 2, fs, levels=(1,)), wrong, 1, bootstrap=200)
    assert rep.max_abs_z > 5 and rep.min_ks_pvalue < 0.01


def test_tau_coverage_constant_ratio():
    # R = 2 on [0, 1] x [0, 1]: r2_T = 4
    g = make_grid(1.0, 1.0, 100, 4)
    cs = constant_preset(0.5, 0.0, 1.0)
    rew = run_reweighted(cs, g, 50, 0, levels=(1, 2, 4, 8))
    assert tau_coverage(rew) == [(1.0, 0.0), (2.0, 0.0), (4.0, 1.0), (8.0, 1.0)]
    with pytest.raises(InsufficientCoverageError):
        compare(run_direct(cs, g, 50, 1, levels=(1, 2, 4, 8)), rew, 2, bootstrap=10)
    recs = compare_levels(run_direct(cs, g, 50, 1, levels=(1, 2, 4, 8)), rew, bootstrap=10)
    assert "error" in recs[0] and "error" not in recs[2]


def test_stopped_martingale_mean_constant_ratio():
    g = make_grid(1.0, 1.0, 100, 4)
    rew = run_reweighted(constant_preset(0.5, 0.0, 1.0), g, 3000, 0, levels=(1, 4))
    for n in (1, 4):
        m, se = stopped_martingale_mean(rew, n)
        assert abs(m - 1) < 4 * se


def test_csv_round_trip():
    rew = run_reweighted(AC, GRID, 30, 4, levels=(0.5, 1, 32))
    text = rew.to_csv_text()
    back = EnsembleResult.from_csv(io.StringIO(text), "reweighted", 4)
    assert back.weighted and back.levels == rew.levels
    assert back.to_csv_text() == text
    for k in rew.values:
        assert np.array_equal(back.values[k], rew.values[k])
    assert np.array_equal(back.stopped_log_xi, rew.stopped_log_xi)
    assert np.array_equal(back.tau_at_T, rew.tau_at_T)
    assert text.splitlines()[0].startswith("path_index,blow_up,point_value@0.5")


def test_head_equals_smaller_run():
    big = run_reweighted(AC, GRID, 300, 4)
    small = run_reweighted(AC, GRID, 100, 4)
    assert big.head(100).to_csv_text() == small.to_csv_text()


def test_pvalues_are_probabilities():
    rep = compare(run_direct(AC, GRID, 300, 1), run_reweighted(AC, GRID, 300, 2), 4,
                  bootstrap=99, report_seed=3)
    for s in rep.functionals:
        assert 0.0 < s.ks_pvalue <= 1.0 and 0.0 <= s.ks_stat <= 1.0
        assert (s.ks_pvalue * 100) == pytest.approx(round(s.ks_pvalue * 100))
    assert 0 < rep.ess_fraction <= 1
    again = compare(run_direct(AC, GRID, 300, 1), run_reweighted(AC, GRID, 300, 2), 4,
                    bootstrap=99, report_seed=3)
    assert again == rep


def test_too_many_blow_ups():
    cs = constant_preset(1.0, 100.0, 0.0)
    with pytest.raises(ComputationError):
        run_direct(cs, GRID, 50, 0, scheme=SchemeConfig(clamp_bound=1.0))


def test_run_rejects_tiny_ensembles():
    with pytest.raises(InvalidConfigurationError):
        run_direct(AC, GRID, 1, 0)
