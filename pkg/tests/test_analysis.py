import warnings

import numpy as np
import pytest
from scipy import stats

from pdmplab.analysis import (
    CRIT_BOUNDARY,
    CRIT_ORIGIN,
    beta_marginal_oracle,
    boundary_strip_scaling,
    classify_regime,
    corner_box_masses,
    corner_mass_scaling,
    gridfield_marginal,
    ks_distance,
    strip_area,
    strip_membership,
    wasserstein_decay_check,
)
from pdmplab.core import SwitchingParams
from pdmplab.gridfield import GridField
from pdmplab.simulate import InsufficientDataError, marginal_cdf, simulate


def scaled(p, c):
    return SwitchingParams(c * p.alpha, c * p.beta, c * p.lambda0, c * p.lambda1)


@pytest.fixture(scope="module")
def log_corner():
    return simulate(SwitchingParams(2.0, 1.0, 1.0, 2.0), n_events=200_000, seed=7)


class TestClassify:
    @pytest.mark.parametrize("rates, expect", [
        ((2, 1, 3, 2), dict(origin_singular=None, left_boundary_singular=False,
                            bounded_interior=None, critical_flags=[CRIT_ORIGIN])),
        ((2, 1, 1, 2), dict(origin_singular=True, left_boundary_singular=None,
                            bounded_interior=False, conjectured_bounded_left_boundary=True)),
        ((2, 1, 4, 2), dict(origin_singular=False, left_boundary_singular=False,
                            bounded_interior=True, bounded_on_gamma0_compacts=True)),
        ((2, 1, 2, 0.5), dict(origin_singular=True, left_boundary_singular=True,
                              bounded_interior=False, bounded_on_gamma0_compacts=False)),
        ((2, 1, 4, 1), dict(origin_singular=None, left_boundary_singular=None,
                            critical_flags=[CRIT_BOUNDARY])),
    ])
    def test_table(self, rates, expect):
        rep = classify_regime(SwitchingParams(*map(float, rates)))
        for k, v in expect.items():
            assert getattr(rep, k) == v, k
        assert rep.bounded_off_left_boundary is True

    @pytest.mark.parametrize("c", [0.1, 3.0, 1e3])
    def test_time_rescaling(self, c):
        for rates in [(2, 1, 3, 2), (2, 1, 1, 2), (5, 2, 9, 1), (3, 1, 0.5, 0.5)]:
            p = SwitchingParams(*map(float, rates))
            assert classify_regime(scaled(p, c)).to_json() == classify_regime(p).to_json()

    def test_mirror(self):
        p = SwitchingParams(2.0, 1.0, 4.0, 0.5)
        rep = classify_regime(p)
        sw = classify_regime(p.swapped())
        assert rep.mirrored.origin_singular == sw.origin_singular
        assert rep.mirrored.left_boundary_singular == sw.left_boundary_singular
        js = rep.to_json()
        assert js["rho1"]["corner_11_singular"] == sw.to_json()["origin_singular"]
        assert "open" not in (js["origin_singular"], js["bounded_interior"])


class TestCorner:
    def test_box_mass_is_beta_marginal(self, log_corner):
        # x2 <= x1^{1/gamma} on the support, so the box mass is the x1 marginal at e^alpha
        eps = np.array([0.3, 0.1, 0.03])
        p = log_corner.params
        box, _ = corner_box_masses(log_corner, eps)
        marg = marginal_cdf(log_corner, 0, 0, eps ** p.alpha, normalize=False)
        np.testing.assert_allclose(box, marg, rtol=1e-9)

    def test_slope(self, log_corner):
        fit = corner_mass_scaling(log_corner.params, log_corner,
                                  eps_grid=0.3 * 2.0 ** -np.arange(6), min_count=50)
        assert fit.slope == pytest.approx(1.0, abs=max(0.1, 3 * fit.slope_stderr))

    def test_slope_time_rescaling(self):
        # running c times faster turns the box at e into the box at e^c, so slopes scale by c
        p = SwitchingParams(2.0, 1.0, 1.0, 2.0)
        c = 4.0
        eps = 0.3 * 2.0 ** -np.arange(4)
        a = corner_mass_scaling(p, simulate(p, n_events=50_000, seed=3), eps, min_count=1)
        q = scaled(p, c)
        b = corner_mass_scaling(q, simulate(q, n_events=50_000, seed=3), eps ** (1 / c), min_count=1)
        np.testing.assert_allclose(a.masses, b.masses, rtol=1e-12)
        assert b.slope == pytest.approx(c * a.slope, rel=1e-9)

    def test_from_gridfield(self):
        p = SwitchingParams(2.0, 1.0, 1.0, 2.0)
        n = 1024
        ax = (np.arange(n) + 1) / n
        F = stats.beta(p.lambda0 / p.alpha, p.lambda1 / p.alpha + 1).cdf
        X1, X2 = np.meshgrid(ax, ax, indexing="ij")
        g0 = p.mass(0) * F(np.minimum(X1, X2 ** p.gamma))
        fld = GridField("cdf", g0, g0 * p.mass(1) / p.mass(0))
        fit = corner_mass_scaling(p, fld, eps_grid=[0.2, 0.14, 0.1, 0.07, 0.05], min_count=1)
        assert fit.slope == pytest.approx(p.lambda0, abs=0.05)

    def test_errors(self, log_corner):
        p = log_corner.params
        with pytest.raises(ValueError):
            corner_mass_scaling(p, log_corner, eps_grid=[0.1, 0.2, 0.3, 0.4])
        with pytest.raises(ValueError):
            corner_mass_scaling(p, log_corner, eps_grid=[0.3, 0.2, 0.1])
        with pytest.raises(InsufficientDataError), warnings.catch_warnings():
            warnings.simplefilter("ignore")
            corner_mass_scaling(p, log_corner, min_count=10 ** 9)

    def test_drop_warning(self, log_corner):
        with pytest.warns(UserWarning, match="dropped"):
            fit = corner_mass_scaling(log_corner.params, log_corner,
                                      eps_grid=0.3 * 4.0 ** -np.arange(6), min_count=50)
        assert fit.dropped and len(fit.epsilons) >= 3


class TestStrip:
    def test_membership_intersections(self, rng):
        p = SwitchingParams(2.0, 1.0, 2.0, 0.5)
        x = np.column_stack([rng.uniform(0, 1, 20000), rng.uniform(0, 1, 20000)])
        x[:, 1] = x[:, 0] ** (1 / p.gamma) * rng.uniform(0.8, 1, 20000)
        for eps in (0.3, 0.1):
            a = strip_membership(p, x, eps, 0.1, 0.6)
            b = strip_membership(p, x, eps, 0.4, 0.9)
            c = strip_membership(p, x, eps, 0.4, 0.6)
            np.testing.assert_array_equal(a & b, c)

    def test_area_scaling(self):
        p = SwitchingParams(2.0, 1.0, 2.0, 0.5)
        eps = 0.3 * 2.0 ** -np.arange(5)
        areas = np.array([strip_area(p, e, 0.5) for e in eps])
        ratio = areas / eps ** (p.alpha + p.beta)
        assert ratio.max() / ratio.min() < 1.5
        slope = np.polyfit(np.log(eps), np.log(areas), 1)[0]
        assert slope == pytest.approx(p.alpha + p.beta, abs=0.15)

    def test_strip_slope_slow_switching(self):
        p = SwitchingParams(2.0, 1.0, 2.0, 0.5)
        log = simulate(p, n_events=300_000, seed=11)
        fit = boundary_strip_scaling(p, log, eps_grid=0.3 * 2.0 ** -np.arange(5), min_count=30)
        assert fit.slope == pytest.approx(p.alpha + p.lambda1, abs=max(0.2, 3 * fit.slope_stderr))

    def test_anchor_must_be_positive(self, log_corner):
        with pytest.raises(ValueError):
            boundary_strip_scaling(log_corner.params, log_corner, t_anchor=0.0)


class TestOracles:
    @pytest.mark.parametrize("which", ["x1", "x2"])
    @pytest.mark.parametrize("regime", [0, 1])
    def test_endpoints(self, which, regime):
        F = beta_marginal_oracle(SwitchingParams(2.0, 1.0, 3.0, 2.0), which, regime)
        assert F(0.0) == pytest.approx(0.0, abs=1e-15)
        assert F(1.0) == pytest.approx(1.0, abs=1e-15)

    def test_regime_symmetry(self):
        p = SwitchingParams(2.0, 1.0, 3.0, 2.0)
        q = np.linspace(0, 1, 101)
        F1 = beta_marginal_oracle(p, "x1", 1)
        G0 = beta_marginal_oracle(p.swapped(), "x1", 0)
        np.testing.assert_allclose(F1(q), 1 - G0(1 - q), atol=1e-14)

    def test_bad_coordinate(self):
        with pytest.raises(ValueError):
            beta_marginal_oracle(SwitchingParams(2.0, 1.0, 3.0, 2.0), "x3", 0)

    def test_ks(self):
        F = beta_marginal_oracle(SwitchingParams(2.0, 1.0, 3.0, 2.0), "x1", 0)
        assert ks_distance(F, F) == 0.0
        assert ks_distance(lambda q: F(q) + 0.1, F) == pytest.approx(0.1)
        q = np.linspace(0, 1, 5001)
        assert ks_distance((q, F(q)), F) < 1e-4

    def test_gridfield_marginal(self):
        n = 64
        ax = (np.arange(n) + 1) / n
        X1, X2 = np.meshgrid(ax, ax, indexing="ij")
        fld = GridField("cdf", 0.4 * X1 * X2, 0.6 * X1 ** 2 * X2)
        q, F = gridfield_marginal(fld, 0, 1)
        np.testing.assert_allclose(F, q ** 2)
        assert ks_distance(fld, lambda s: s, coord=1, regime=0) < 1e-12


class TestContraction:
    def test_ratio_profile(self):
        p = SwitchingParams(2.0, 1.0, 3.0, 2.0)
        pairs = [((0.5, 0.4), (0.5, 0.3)), ((0.6, 0.35), (0.45, 0.3)), ((0.9, 0.9), (0.1, 0.05))]
        rows = wasserstein_decay_check(p, pairs, n_events=3000)
        for k in range(3):
            r = rows[rows[:, 0] == k]
            assert r[0, 2] == pytest.approx(1.0, rel=1e-15)
            assert np.all(np.diff(r[:, 2]) <= 1e-15)
            assert np.all(r[:, 2] <= r[:, 3] * (1 + 1e-12))
        # separation along the slow axis saturates the bound
        slow = rows[rows[:, 0] == 0]
        np.testing.assert_allclose(slow[:, 2], slow[:, 3], rtol=1e-12)

    def test_identical_pair(self):
        p = SwitchingParams(2.0, 1.0, 3.0, 2.0)
        rows = wasserstein_decay_check(p, [((0.5, 0.4), (0.5, 0.4))], n_events=100)
        assert np.all(rows[:, 2] == 0)
