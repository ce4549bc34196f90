"""Profile construction, branch inverses, critical points, thresholds."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbpde import errors
from fbpde.profiles import (
    MINUS,
    PLUS,
    branch_inverse,
    critical_points,
    custom_from_table,
    eval_flux,
    hoellig_piecewise_linear,
    infimum_slope_ratio,
    perona_malik_exp,
    perona_malik_rational,
    profile_from_mapping,
    uniqueness_threshold,
    validate_hypotheses,
)


def rational_branch_oracle(r, branch):
    """Quadratic oracle for sigma = s/(1+s^2): r*s^2 - s + r = 0."""
    disc = math.sqrt(1.0 - 4.0 * r * r)
    if branch == MINUS:
        return (1.0 - disc) / (2.0 * r)
    return (1.0 + disc) / (2.0 * r)


class TestEvalFlux:
    def test_exp_profile_unit_vector(self):
        prof = perona_malik_exp(1.0)
        out = eval_flux(prof, np.array([1.0, 0.0]))
        assert np.allclose(out, [math.exp(-0.5), 0.0], atol=1e-14)

    def test_zero_input_gives_zero(self):
        for prof in (perona_malik_exp(), perona_malik_rational(), hoellig_piecewise_linear(1, 2, 1, 0.25, 1)):
            assert np.all(eval_flux(prof, np.zeros(3)) == 0.0)

    def test_rational_closed_form(self):
        # sigma(2) = 2/(1+4) = 0.4 exactly
        prof = perona_malik_rational(1.0)
        out = eval_flux(prof, np.array([0.0, 2.0]))
        assert np.allclose(out, [0.0, 0.4], atol=1e-15)

    @given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
    @settings(max_examples=50, deadline=None)
    def test_positivity_transfers_to_flux(self, px, py):
        # sigma(s)*s >= 0 for all sampled s implies A(p).p >= 0
        prof = perona_malik_rational(1.0)
        p = np.array([px, py])
        assert eval_flux(prof, p) @ p >= -1e-12


class TestBranchInverse:
    def test_rational_quadratic_oracle(self):
        prof = perona_malik_rational(1.0)
        assert branch_inverse(prof, 0.4, MINUS) == pytest.approx(0.5, abs=1e-10)
        assert branch_inverse(prof, 0.4, PLUS) == pytest.approx(2.0, abs=1e-10)

    def test_peak_degenerates_to_s0(self):
        prof = perona_malik_rational(1.0)
        for branch in (MINUS, PLUS):
            assert branch_inverse(prof, 0.5, branch) == pytest.approx(1.0, abs=1e-10)
        # approaching the peak from below, both branches tend to s0
        for r in (0.49, 0.4999, 0.4999999):
            lo = branch_inverse(prof, r, MINUS)
            hi = branch_inverse(prof, r, PLUS)
            assert lo < 1.0 < hi

    def test_piecewise_linear_minus_hits_s1_star(self):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        # sigma(s2) = 0.75 and the first piece is s -> s, so s_-(0.75) = 0.75
        assert branch_inverse(prof, 0.75, MINUS) == pytest.approx(0.75, abs=1e-12)

    def test_out_of_range_raises(self):
        prof = perona_malik_rational(1.0)
        with pytest.raises(errors.OutOfRangeError):
            branch_inverse(prof, 0.6, MINUS)
        with pytest.raises(errors.OutOfRangeError):
            branch_inverse(prof, -0.1, PLUS)
        plh = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        with pytest.raises(errors.OutOfRangeError):
            branch_inverse(plh, 0.5, MINUS)  # below sigma(s2)=0.75

    @given(st.floats(0.01, 0.49))
    @settings(max_examples=80, deadline=None)
    def test_round_trip_rational(self, r):
        prof = perona_malik_rational(1.0)
        for branch in (MINUS, PLUS):
            s = branch_inverse(prof, r, branch)
            assert prof.sigma(s) == pytest.approx(r, abs=1e-10)
            assert abs(s - rational_branch_oracle(r, branch)) < 1e-9

    @given(st.floats(0.76, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_piecewise(self, r):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        for branch in (MINUS, PLUS):
            s = branch_inverse(prof, r, branch)
            assert prof.sigma(s) == pytest.approx(r, abs=1e-10)

    def test_branches_monotone_as_r_vanishes(self):
        prof = perona_malik_rational(1.0)
        rs = np.geomspace(0.4, 1e-4, 20)
        lows = [branch_inverse(prof, r, MINUS) for r in rs]
        highs = [branch_inverse(prof, r, PLUS) for r in rs]
        assert all(a > b for a, b in zip(lows, lows[1:]))  # s_-(r) -> 0
        assert all(a < b for a, b in zip(highs, highs[1:]))  # s_+(r) -> inf
        assert lows[-1] < 1e-3
        assert highs[-1] > 1e3


class TestCriticalPoints:
    def test_exp_profile_peak(self):
        # sigma'(s) = (1-s^2) e^{-s^2/2} has its root at s = 1
        prof = perona_malik_exp(1.0)
        assert critical_points(prof)["s0"] == pytest.approx(1.0, abs=1e-10)

    def test_rational_profile_peak(self):
        # sigma'(s) = (1-s^2)/(1+s^2)^2 has its root at s = 1
        prof = perona_malik_rational(1.0)
        assert critical_points(prof)["s0"] == pytest.approx(1.0, abs=1e-10)

    def test_piecewise_linear_stars(self):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        pts = critical_points(prof)
        assert pts["s1"] == 1.0 and pts["s2"] == 2.0
        assert pts["s1_star"] == pytest.approx(0.75, abs=1e-12)
        assert pts["s2_star"] == pytest.approx(2.25, abs=1e-12)
        # sigma(2.25) = k3*0.25 + 0.75 = 1.0 = sigma(1)
        assert prof.sigma(2.25) == pytest.approx(prof.sigma(1.0), abs=1e-14)

    def test_monotone_profile_rejected(self):
        prof = custom_from_table(np.linspace(0, 4, 40), np.linspace(0, 4, 40))
        with pytest.raises(errors.HypothesisViolatedError):
            critical_points(prof)


class TestUniquenessThreshold:
    def test_reference_parameters(self):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        m0_l, s1_star, c = uniqueness_threshold(prof)
        assert m0_l == pytest.approx(0.375, abs=1e-12)
        assert s1_star == pytest.approx(0.75, abs=1e-12)
        assert c == pytest.approx(0.375, abs=1e-12)

    def test_k2_zero_reduces_to_ratio(self):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.0, 1.0)
        m0_l, _, _ = uniqueness_threshold(prof)
        assert m0_l == pytest.approx(1.0**2 / 2.0, abs=1e-12)

    def test_second_branch(self):
        # -k2(s2-s1)+k1 s1 = 0.75 >= k3 s2 = 0.2, so M0_l = s1 k3/k1 and c = k3
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 0.1)
        m0_l, s1_star, c = uniqueness_threshold(prof)
        assert m0_l == pytest.approx(0.1, abs=1e-12)
        assert c == pytest.approx(0.1, abs=1e-12)
        assert prof.sigma(m0_l) == pytest.approx(c * 1.0, abs=1e-12)

    def test_infimum_matches_sampled(self):
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        s = np.linspace(1e-4, 40.0, 200_000)
        sampled = float(np.min(prof.sigma(s) / s))
        assert infimum_slope_ratio(prof) == pytest.approx(sampled, rel=1e-3)


class TestValidation:
    def test_vetted_profiles_pass(self):
        for prof in (
            perona_malik_exp(1.0),
            perona_malik_rational(2.0),
            hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0),
        ):
            report = validate_hypotheses(prof)
            assert report.passed, str(report)

    def test_degenerate_sigma_s2_flagged(self):
        # sigma(s2) = 0 is permitted but must be flagged
        prof = hoellig_piecewise_linear(1.0, 2.0, 1.0, 1.0, 1.0)
        report = validate_hypotheses(prof)
        assert any("s1*=0" in flag for flag in report.flags)

    def test_negative_middle_rejected(self):
        with pytest.raises(errors.InvalidProfileError):
            hoellig_piecewise_linear(1.0, 2.0, 1.0, 2.0, 1.0)


class TestConfig:
    def test_mapping_round_trip(self):
        prof = profile_from_mapping({"case": "pm", "kind": "rational", "s0": "2.0"})
        assert prof.params["s0"] == 2.0
        prof2 = profile_from_mapping(
            {"case": "plh", "s1": "1", "s2": "2", "k1": "1", "k2": "0.25", "k3": "1"}
        )
        assert prof2.params["s2_star"] == pytest.approx(2.25)

    def test_custom_table_file(self, tmp_path):
        s = np.linspace(0.0, 4.0, 401)
        sig = s / (1.0 + s**2)
        path = tmp_path / "prof.csv"
        with open(path, "w") as fh:
            fh.write("s,sigma\n")
            fh.writelines(f"{a},{b}\n" for a, b in zip(s, sig))
        prof = profile_from_mapping({"case": "custom", "table": str(path)})
        assert prof.sigma(2.0) == pytest.approx(0.4, abs=1e-6)
        assert critical_points(prof)["s0"] == pytest.approx(1.0, abs=1e-2)
