"""Rank-one geometry: constraint sets, angle formulas, DET, Newton solves."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbpde import errors
from fbpde.profile_mod import modify_profile
from fbpde.profiles import eval_flux, hoellig_piecewise_linear, perona_malik_rational
from fbpde.rankone import (
    F_MINUS,
    F_PLUS,
    NEITHER,
    RankOneWitness,
    SpaceTimeMatrix,
    WindowParams,
    angle_endpoints,
    classify_F,
    collinear_projection,
    collinear_witness,
    det_B,
    h_bound,
    in_K,
    membership_S,
    solve_rank_one,
    twod_angle,
    _flux_jacobian,
    _jacobian,
    _system,
    _witness_to_primed,
)


@pytest.fixture
def pm():
    return perona_malik_rational(1.0)


@pytest.fixture
def w(pm):
    return WindowParams(pm, 0.3, 0.4)


@pytest.fixture
def mp(pm):
    return modify_profile(pm, 0.3, 0.4)


def random_trace_free(rng, n):
    B = rng.standard_normal((n, n))
    return B - np.trace(B) / n * np.eye(n)


class TestConstraintSets:
    def test_in_K_defining_member(self, pm):
        p = np.array([0.7, 0.2])
        xi = SpaceTimeMatrix.diagonal(p, eval_flux(pm, p))
        assert in_K(xi, 0.0, pm)

    def test_in_K_tamper_detected(self, pm):
        p = np.array([0.7, 0.2])
        beta = eval_flux(pm, p)
        xi = SpaceTimeMatrix(p=p, c=0.3, B=np.zeros((2, 2)), beta=beta + 1e-3)
        assert not in_K(xi, 0.0, pm)

    def test_in_K_trace_level(self, pm):
        p = np.array([0.5, 0.1])
        xi = SpaceTimeMatrix(p=p, c=0.0, B=np.diag([1.0, -1.0]), beta=eval_flux(pm, p))
        assert in_K(xi, 0.0, pm)
        assert not in_K(xi, 1.0, pm)

    def test_classify_minus(self, pm, w):
        # s_-(0.3) = 1/3 and s_-(0.4) = 0.5 from the quadratic oracle
        p = 0.45 * np.array([1.0, 0.0])
        xi = SpaceTimeMatrix.diagonal(p, eval_flux(pm, p))
        assert classify_F(xi, w) == F_MINUS

    def test_classify_boundary_excluded(self, pm, w):
        p = w.radii["s_minus_r1"] * np.array([1.0, 0.0])
        xi = SpaceTimeMatrix.diagonal(p, eval_flux(pm, p))
        assert classify_F(xi, w) == NEITHER

    def test_classify_plus(self, pm, w):
        # s_+(0.3) = (1 + sqrt(0.64))/0.6 = 3, s_+(0.4) = 2: plus annulus (2, 3)
        p = 2.2 * np.array([0.0, 1.0])
        xi = SpaceTimeMatrix.diagonal(p, eval_flux(pm, p))
        assert classify_F(xi, w) == F_PLUS

    def test_wrong_beta_is_neither(self, pm, w):
        p = 0.45 * np.array([1.0, 0.0])
        xi = SpaceTimeMatrix.diagonal(p, eval_flux(pm, p) + np.array([0.0, 1e-3]))
        assert classify_F(xi, w) == NEITHER


class TestTwodAngle:
    def test_equal_tilde_radii_collapse(self):
        assert twod_angle(1.0, 3.0, 2.0, 2.0) == 0.0

    def test_reference_value_and_orthogonality(self):
        theta = twod_angle(1.0, 3.0, 2.0, 1.0)
        assert theta == pytest.approx(math.atan(math.sqrt(1.0 / 6.0)), abs=1e-15)
        assert theta == pytest.approx(0.387597, abs=1e-6)
        assert math.sin(theta) ** 2 == pytest.approx(1.0 / 7.0, abs=1e-12)
        v1, v2, w1, w2 = angle_endpoints(1.0, 3.0, 2.0, 1.0, theta)
        assert abs((w1 - w2) @ (v1 - v2)) <= 1e-12

    def test_continuity_near_zero(self):
        theta = twod_angle(1.0, 2.0, 1.0, 1.0 - 1e-15)
        assert 0.0 < theta < 1e-7

    def test_rt1_smaller_rejected(self):
        with pytest.raises(errors.ParameterDomainError):
            twod_angle(1.0, 3.0, 1.0, 2.0)

    @given(
        st.floats(0.1, 2.0),
        st.floats(0.05, 3.0),
        st.floats(0.1, 2.0),
        st.floats(0.0, 1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_orthogonality_identity_random(self, r1, gap, rt2, frac):
        r2 = r1 + gap
        rt1 = rt2 * (1.0 + frac)
        theta = twod_angle(r1, r2, rt1, rt2)
        v1, v2, w1, w2 = angle_endpoints(r1, r2, rt1, rt2, theta)
        scale = max(1.0, r2 * rt1)
        assert abs((w1 - w2) @ (v1 - v2)) <= 1e-12 * scale


class TestHBound:
    def test_eta_zero_collapses_to_max_delta(self):
        assert h_bound("I", 0.5, 2.0, 0.4, 0.1, 0.3, 0.0) == pytest.approx(0.3, abs=1e-15)
        assert h_bound("II", 0.5, 2.0, 0.4, 0.25, 0.1, 0.0) == pytest.approx(0.25, abs=1e-15)

    def test_zero_arguments_give_zero(self):
        assert h_bound("I", 0.5, 2.0, 0.4, 0.0, 0.0, 0.0) == 0.0
        assert h_bound("II", 0.5, 2.0, 0.4, 0.0, 0.0, 0.0) == 0.0

    def test_case_i_reference_recomputation(self):
        a, b, c = 0.5, 2.0, 0.4
        d1, d2, eta = 0.1, 0.5, 0.05
        g = math.atan(math.sqrt((b - a + d1 + d2) * eta / (2 * (a + b - d1) * (c - eta))))
        cg = math.cos(g)
        h1 = max(math.sqrt(2) * a * math.sqrt(1 - cg), math.sqrt((a - d1) ** 2 + a**2 - 2 * a * (a - d1) * cg))
        h2 = max(math.sqrt(2) * b * math.sqrt(1 - cg), math.sqrt((b + d2) ** 2 + b**2 - 2 * b * (b + d2) * cg))
        h3 = max(math.sqrt(2) * c * math.sqrt(1 - cg), math.sqrt((c - eta) ** 2 + c**2 - 2 * c * (c - eta) * cg))
        assert h_bound("I", a, b, c, d1, d2, eta) == pytest.approx(max(h1, h2, h3), abs=1e-15)

    def test_domain_errors(self):
        with pytest.raises(errors.ParameterDomainError):
            h_bound("I", 0.5, 2.0, 0.4, 0.6, 0.0, 0.0)  # d1 >= a
        with pytest.raises(errors.ParameterDomainError):
            h_bound("II", 0.5, 2.0, 0.4, 0.1, 1.6, 0.0)  # d2 >= b - a
        with pytest.raises(errors.ParameterDomainError):
            h_bound("I", 0.5, 2.0, 0.4, 0.1, 0.0, 0.4)  # eta >= c


class TestCollinearProjection:
    def test_collinear_pair(self, pm, w):
        zeta = np.array([0.6, 0.8])
        p_minus = 0.45 * zeta
        p_plus = 2.2 * zeta
        # collinear pair is orthogonal iff A(p+) = A(p-)
        if abs(float(pm.sigma(2.2)) - float(pm.sigma(0.45))) > 1e-12:
            p_plus = find_matching_plus(pm, 0.45) * zeta
        zeta0, dist = collinear_projection(p_minus, p_plus, w)
        assert np.allclose(zeta0, zeta, atol=1e-12)
        assert dist <= h_bound(
            "I", w.radii["s_minus_r2"], w.radii["s_plus_r2"], w.r2,
            w.radii["s_minus_r2"] - w.radii["s_minus_r1"],
            w.radii["s_plus_r1"] - w.radii["s_plus_r2"], w.r2 - w.r1,
        )

    def test_synthesized_orthogonal_pair(self, pm, w):
        # radii chosen with sigma(|p-|) >= sigma(|p+|), as the angle lemma needs
        r_minus, r_plus = 0.47, 2.15
        rt1 = float(pm.sigma(r_minus))
        rt2 = float(pm.sigma(r_plus))
        assert rt1 >= rt2
        theta = twod_angle(r_minus, r_plus, rt1, rt2)
        p_minus = r_minus * np.array([math.cos(math.pi / 2 + theta), math.sin(math.pi / 2 + theta)])
        p_plus = r_plus * np.array([math.cos(math.pi / 2 - theta), math.sin(math.pi / 2 - theta)])
        ortho = (eval_flux(pm, p_plus) - eval_flux(pm, p_minus)) @ (p_plus - p_minus)
        assert abs(ortho) <= 1e-10
        zeta0, dist = collinear_projection(p_minus, p_plus, w)
        assert np.allclose(zeta0, [0.0, 1.0], atol=1e-12)

    def test_swapped_arguments_rejected(self, pm, w):
        zeta = np.array([1.0, 0.0])
        with pytest.raises(errors.PreconditionFailedError):
            collinear_projection(2.2 * zeta, 0.45 * zeta, w)


def find_matching_plus(profile, s_minus):
    """Radius on the plus branch with sigma equal to sigma(s_minus)."""
    from fbpde.profiles import PLUS, branch_inverse

    return branch_inverse(profile, float(profile.sigma(s_minus)), PLUS)


class TestDetB:
    def test_collinear_hand_value(self, pm):
        # sigma'(2) = -0.12, sigma(2)/2 = 0.2, sigma(0.5)/0.5 = 0.8:
        # coefficient c = (-0.12 - 0.2 + 0.8)/(0.2 - 0.8) = -0.8, det = 0.2
        q = np.array([1.0])
        val = det_B(2.0 * q, 0.5 * q, q, np.array([0.0]), pm)
        assert val == pytest.approx(0.2, abs=1e-12)

    def test_rotation_invariance(self, pm):
        vals = []
        for ang in (0.0, 0.7, 2.1, 4.4):
            q = np.array([math.cos(ang), math.sin(ang)])
            vals.append(det_B(2.0 * q, 0.5 * q, q, np.zeros(2), pm))
        assert np.allclose(vals, vals[0], atol=1e-12)
        assert vals[0] == pytest.approx(0.2, abs=1e-12)

    def test_degenerate_secant_rejected(self, pm):
        q = np.array([1.0])
        # pick radii with equal sigma(s)/s: s and 1/s for sigma = s/(1+s^2)
        with pytest.raises(errors.DivisionDegenerateError):
            det_B(2.0 * q, 0.5 * q * 0 + 2.0 * q, q, np.array([0.0]), pm)

    def test_matches_assembled_jacobian_determinant(self, pm, w, mp):
        # det(J) = (-1)^n s'^(n-1) d0^n DET (q'.omega-) links the closed form
        # to the assembled Newton matrix
        rng = np.random.default_rng(42)
        checked = 0
        for _ in range(60):
            ang = rng.uniform(0, 2 * math.pi)
            s = rng.uniform(0.6, 1.8)
            p = s * np.array([math.cos(ang), math.sin(ang)]) + 0.02 * rng.standard_normal(2)
            beta = mp.flux(p) + 1e-3 * rng.standard_normal(2)
            try:
                wit = solve_rank_one(p, beta, w)
            except (errors.NoConvergenceError, errors.SingularJacobianError):
                continue
            gp, qp, sp = _witness_to_primed(wit)
            f, y, z = _system(pm, p, beta, gp, qp, sp)
            J = _jacobian(pm, gp, qp, sp, y, z)
            t_plus = float(np.linalg.norm(qp))
            detB = det_B(z, y, qp / t_plus, gp / t_plus, pm)
            au = float(pm.sigma(np.linalg.norm(z))) / float(np.linalg.norm(z))
            av = float(pm.sigma(np.linalg.norm(y))) / float(np.linalg.norm(y))
            omega = _flux_jacobian(pm, y) @ qp - gp
            pred = sp ** (2 - 1) * (au - av) ** 2 * detB * float(qp @ omega)
            assert np.linalg.det(J) == pytest.approx(pred, rel=1e-9)
            checked += 1
        assert checked >= 50


class TestSolveRankOne:
    def test_collinear_seed_residual_zero(self, pm, w, mp):
        for s in (0.4, 0.9, 1.6):
            p = s * np.array([1.0, 0.0])
            beta = mp.flux(p)
            wit = solve_rank_one(p, beta, w)
            xi = SpaceTimeMatrix.diagonal(p, beta)
            eta = wit.eta(1.0)
            assert classify_F(xi.shifted(wit.t_minus, eta), w) == F_MINUS
            assert classify_F(xi.shifted(wit.t_plus, eta), w) == F_PLUS

    def test_perturbed_point_converges(self, pm, w, mp):
        rng = np.random.default_rng(3)
        p = np.array([1.2, 0.3])
        beta = mp.flux(p)
        wit0 = solve_rank_one(p, beta, w)
        p2 = p + 1e-3 * rng.standard_normal(2)
        b2 = beta + 1e-3 * rng.standard_normal(2)
        wit = solve_rank_one(p2, b2, w, seed=wit0)
        gp, qp, sp = _witness_to_primed(wit)
        f, _, _ = _system(pm, p2, b2, gp, qp, sp)
        assert float(np.max(np.abs(f))) <= 1e-10

    def test_beta_above_r2_not_member(self, pm, w):
        res = membership_S(np.array([1.0, 0.0]), np.array([0.5, 0.0]), w)
        assert not res.ok
        assert any("r2" in note for note in res.diagnostics)

    def test_eta_rank_one_all_b(self, pm, w, mp):
        p = np.array([1.1, -0.4])
        wit = solve_rank_one(p, mp.flux(p), w)
        for b in (0.1, 1.0, 10.0):
            sv = np.linalg.svd(wit.eta(b), compute_uv=False)
            assert sv[1] <= 1e-10 * sv[0]

    def test_witness_sound_for_any_offdiagonal(self, pm, w, mp):
        # the witness only sees the diagonal blocks: any trace-free B, any c
        rng = np.random.default_rng(8)
        p = np.array([0.9, 0.7])
        beta = mp.flux(p)
        wit = solve_rank_one(p, beta, w)
        eta = wit.eta(1.0)
        for _ in range(10):
            xi = SpaceTimeMatrix(
                p=p, c=float(rng.standard_normal()), B=random_trace_free(rng, 2), beta=beta
            )
            assert classify_F(xi.shifted(wit.t_minus, eta), w) == F_MINUS
            assert classify_F(xi.shifted(wit.t_plus, eta), w) == F_PLUS

    def test_lambda_convexity_reconstruction(self, pm, w, mp):
        p = np.array([1.3, 0.1])
        beta = mp.flux(p)
        wit = solve_rank_one(p, beta, w)
        xi = SpaceTimeMatrix.diagonal(p, beta)
        eta = wit.eta(1.0)
        lam = wit.mixing
        xi_plus = xi.as_matrix() + wit.t_plus * eta
        xi_minus = xi.as_matrix() + wit.t_minus * eta
        recon = lam * xi_plus + (1 - lam) * xi_minus
        assert np.max(np.abs(recon - xi.as_matrix())) <= 1e-10

    def test_origin_rejected_with_diagnostics(self, pm, w):
        res = membership_S(np.zeros(2), np.zeros(2), w)
        assert not res.ok
        assert len(res.diagnostics) >= 3

    def test_membership_along_modified_flux(self, pm, w, mp):
        for s in np.linspace(0.36, 1.95, 9):
            p = s * np.array([0.8, 0.6])
            assert membership_S(p, mp.flux(p), w).ok, s

    def test_p_above_outer_radius_not_member(self, pm, w):
        res = membership_S(np.array([3.2, 0.0]), np.array([0.3, 0.0]), w)
        assert not res.ok


class TestCaseII:
    def test_window_and_membership(self):
        plh = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        w2 = WindowParams(plh, 0.8, 0.95)
        assert w2.case == "II"
        assert w2.minus_interval() == pytest.approx((0.8, 0.95))
        assert w2.plus_interval() == pytest.approx((2.05, 2.2))
        w2.validate_det_floor()
        mp2 = modify_profile(plh, 0.8, 0.95)
        for s in (0.85, 1.2, 1.8, 2.1):
            p = s * np.array([1.0])
            assert membership_S(p, mp2.flux(p), w2).ok, s

    def test_one_dimensional_witness_has_zero_gamma(self):
        plh = hoellig_piecewise_linear(1.0, 2.0, 1.0, 0.25, 1.0)
        w2 = WindowParams(plh, 0.8, 0.95)
        mp2 = modify_profile(plh, 0.8, 0.95)
        p = np.array([1.4])
        wit = solve_rank_one(p, mp2.flux(p), w2)
        assert abs(wit.gamma[0]) <= 1e-12


class TestWindowValidation:
    def test_det_floor_positive_for_good_window(self, w):
        assert w.validate_det_floor() > 1e-6

    def test_bad_interval_rejected(self, pm):
        with pytest.raises(errors.WindowInvalidError):
            WindowParams(pm, 0.4, 0.3)
