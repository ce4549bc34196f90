"""Surrogate-profile construction and clause verification."""

import dataclasses
import math

import numpy as np
import pytest

from fbpde import errors
from fbpde.profile_mod import CASE_I, CASE_II, modify_profile, verify_modification
from fbpde.profiles import hoellig_piecewise_linear, perona_malik_rational


@pytest.fixture
def pm():
    return perona_malik_rational(1.0)


@pytest.fixture
def plh():
    return hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)


def quadratic_minus_root(r):
    return (1.0 - math.sqrt(1.0 - 4.0 * r * r)) / (2.0 * r)


class TestCaseI:
    def test_matches_base_below_window(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        assert mp.case == CASE_I
        a = quadratic_minus_root(0.3)  # s_-(0.3) = 1/3 for sigma = s/(1+s^2)
        assert mp.radii["s_minus_r1"] == pytest.approx(a, abs=1e-10)
        s = np.linspace(0.0, a, 500)
        assert np.allclose(mp.sigma_tilde(s), pm.sigma(s), atol=1e-14)

    def test_zero_stays_zero(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        assert mp.sigma_tilde(0.0) == 0.0

    def test_strictly_below_inside_window(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        s = np.linspace(mp.radii["s_minus_r1"] + 1e-6, mp.radii["s_plus_r2"] - 1e-6, 2000)
        assert np.all(mp.sigma_tilde(s) < pm.sigma(s))

    def test_derivative_bounds(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        s = np.linspace(1e-6, 8.0, 5000)
        d = mp.sigma_tilde_prime(s)
        assert np.all(d >= mp.theta - 1e-12)
        assert np.all(d <= mp.Theta + 1e-12)
        assert np.all(d > 0)

    def test_report_passes(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        report = verify_modification(mp)
        assert report.passed, str(report)
        strict = [c for c in report.clauses if "below sigma" in c.name]
        assert strict and strict[0].max_violation == 0.0

    def test_bad_window_rejected(self, pm):
        with pytest.raises(errors.WindowInvalidError):
            modify_profile(pm, 0.4, 0.3)
        with pytest.raises(errors.WindowInvalidError):
            modify_profile(pm, 0.3, 0.6)  # above the peak value 0.5


class TestCaseII:
    def test_rejoins_base_above_window(self, plh):
        mp = modify_profile(plh, 0.8, 0.95)
        assert mp.case == CASE_II
        # linear outer branch: s_+(0.95) = s2 + (0.95 - sigma(s2))/k3 = 2.2
        assert mp.radii["s_plus_r2"] == pytest.approx(2.2, abs=1e-10)
        s = np.linspace(2.2, 8.0, 1000)
        assert np.allclose(mp.sigma_tilde(s), plh.sigma(s), atol=1e-12)

    def test_sign_pattern(self, plh):
        mp = modify_profile(plh, 0.8, 0.95)
        s_lo = np.linspace(mp.radii["s_minus_r1"] + 1e-5, mp.radii["s_minus_r2"], 800)
        assert np.all(mp.sigma_tilde(s_lo) < plh.sigma(s_lo))
        s_hi = np.linspace(mp.radii["s_plus_r1"], mp.radii["s_plus_r2"] - 1e-5, 800)
        assert np.all(mp.sigma_tilde(s_hi) > plh.sigma(s_hi))

    def test_c1_at_rejoin(self, plh):
        mp = modify_profile(plh, 0.8, 0.95)
        b = mp.radii["s_plus_r2"]
        eps = 1e-7
        assert mp.sigma_tilde(b - eps) == pytest.approx(mp.sigma_tilde(b + eps), abs=1e-6)
        assert mp.sigma_tilde_prime(b - eps) == pytest.approx(
            mp.sigma_tilde_prime(b + eps), abs=1e-5
        )

    def test_report_passes(self, plh):
        report = verify_modification(modify_profile(plh, 0.8, 0.95))
        assert report.passed, str(report)

    def test_bad_window_rejected(self, plh):
        with pytest.raises(errors.WindowInvalidError):
            modify_profile(plh, 0.5, 0.9)  # r1 below sigma(s2) = 0.75


class TestTamperDetection:
    def test_identity_surrogate_fails_strict_clause(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        tampered = dataclasses.replace(mp, sigma_tilde=pm.sigma)
        report = verify_modification(tampered)
        assert not report.passed
        failing = [c.name for c in report.clauses if not c.passed]
        assert any("below sigma" in name for name in failing)


class TestUniformEllipticity:
    def test_flux_jacobian_pinched(self, pm):
        # theta|q|^2 <= q . (dA/dp) q <= Theta|q|^2, Jacobian by central differences
        mp = modify_profile(pm, 0.3, 0.4)
        rng = np.random.default_rng(7)
        eps = 1e-6
        for _ in range(40):
            p = rng.uniform(-3.0, 3.0, size=2)
            q = rng.normal(size=2)
            jac = np.empty((2, 2))
            for j in range(2):
                dp = np.zeros(2)
                dp[j] = eps
                jac[:, j] = (mp.flux(p + dp) - mp.flux(p - dp)) / (2 * eps)
            quad = q @ jac @ q
            assert quad >= mp.theta * (q @ q) - 1e-4
            assert quad <= mp.Theta * (q @ q) + 1e-4

    def test_flux_equals_base_in_matched_region(self, pm):
        mp = modify_profile(pm, 0.3, 0.4)
        p = np.array([0.2, 0.1])  # |p| < s_-(0.3) = 1/3
        from fbpde.profiles import eval_flux

        assert np.allclose(mp.flux(p), eval_flux(pm, p), atol=1e-15)


def test_dump_curve(tmp_path, pm):
    from fbpde.profile_mod import dump_curve

    mp = modify_profile(pm, 0.3, 0.4)
    path = tmp_path / "curve.csv"
    dump_curve(mp, str(path), n=50)
    rows = path.read_text().strip().splitlines()
    assert rows[0] == "s,sigma_tilde"
    assert len(rows) == 51
