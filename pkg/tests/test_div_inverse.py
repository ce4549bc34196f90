"""Right inverse of the divergence: identities, bounds, boundary behavior."""

import numpy as np
import pytest

from fbpde import errors
from fbpde.div_inverse import (
    C0,
    BoxSpec,
    boundary_max,
    box_mean_integral,
    divergence_nodes,
    rinv_spacetime,
    rinv_spatial,
)


def unit_interval(n=257):
    return BoxSpec(intervals=((0.0, 1.0),), n_nodes=(n,))


def unit_square(n=65):
    return BoxSpec(intervals=((0.0, 1.0), (0.0, 1.0)), n_nodes=(n, n))


class TestBump:
    def test_unit_mass_and_bound(self):
        spec = unit_interval()
        rho = spec.bump_on_axis(0)
        assert np.trapezoid(rho, dx=spec.spacing(0)) == pytest.approx(1.0, abs=1e-12)
        assert rho.max() <= C0 + 1e-9
        assert rho[0] == 0.0 and rho[-1] == 0.0

    def test_c0_constant_value(self):
        # 1 / integral of exp(-1/(1-t^2)) over (-1,1)
        assert C0 == pytest.approx(2.2523, abs=2e-4)


class TestOneDimensional:
    def test_constant_gives_linear(self):
        spec = unit_interval(101)
        (v,) = rinv_spatial(np.ones(101), spec)
        assert np.allclose(v, spec.nodes(0), atol=1e-14)

    def test_sine_antiderivative(self):
        # oracle: v = (1 - cos 2 pi x) / (2 pi), vanishing at both ends
        spec = unit_interval(513)
        x = spec.nodes(0)
        (v,) = rinv_spatial(np.sin(2 * np.pi * x), spec)
        exact = (1.0 - np.cos(2 * np.pi * x)) / (2 * np.pi)
        assert np.max(np.abs(v - exact)) < 1e-5
        assert abs(v[0]) == 0.0 and abs(v[-1]) < 1e-8


class TestTwoDimensional:
    def test_constant_field_symbolic_recursion(self):
        # u = 1 on the unit square: v = (rho(x2) x1, x2 - int_0^{x2} rho)
        spec = unit_square(81)
        u = np.ones(spec.n_nodes)
        v1, v2 = rinv_spatial(u, spec)
        x1 = spec.nodes(0)
        rho = spec.bump_on_axis(1)
        cum = spec.bump_cumulative(1)
        assert np.allclose(v1, np.outer(x1, rho), atol=1e-12)
        x2 = spec.nodes(1)
        assert np.allclose(v2, x2[None, :] - cum[None, :], atol=1e-12)
        # div = rho + 1 - rho = 1; the residual is O(h^2 rho'') from the bump
        div = divergence_nodes([v1, v2], spec)
        interior = div[2:-2, 2:-2]
        assert np.max(np.abs(interior - 1.0)) < 1e-2

    def test_divergence_order_of_accuracy(self):
        errs = []
        for n in (33, 65):
            spec = unit_square(n)
            x, y = np.meshgrid(spec.nodes(0), spec.nodes(1), indexing="ij")
            u = np.sin(2 * np.pi * x) * np.cos(np.pi * y) + x * y
            v = rinv_spatial(u, spec)
            div = divergence_nodes(v, spec)
            errs.append(float(np.max(np.abs(div - u))))
        assert np.log2(errs[0] / errs[1]) >= 1.8, errs

    def test_compact_support_zero_mean_vanishes_on_boundary(self):
        spec = unit_square(97)
        x, y = np.meshgrid(spec.nodes(0), spec.nodes(1), indexing="ij")
        w = np.sin(2 * np.pi * x) * np.sin(np.pi * y) ** 2  # zero mean, zero boundary
        assert abs(box_mean_integral(w, spec)) < 1e-12
        v = rinv_spatial(w, spec)
        assert boundary_max(v) <= 1e-8

    def test_linearity(self):
        spec = unit_square(41)
        rng = np.random.default_rng(3)
        u = rng.standard_normal(spec.n_nodes)
        w = rng.standard_normal(spec.n_nodes)
        a, b = 1.7, -0.4
        left = rinv_spatial(a * u + b * w, spec)
        vu = rinv_spatial(u, spec)
        vw = rinv_spatial(w, spec)
        for L, cu, cw in zip(left, vu, vw):
            assert np.allclose(L, a * cu + b * cw, atol=1e-12)

    def test_sup_bound_constant_stable(self):
        # ||R u|| <= C (sum |J_k|) ||u||; the measured C must be stable across samples
        spec = unit_square(49)
        rng = np.random.default_rng(5)
        x, y = np.meshgrid(spec.nodes(0), spec.nodes(1), indexing="ij")
        consts = []
        for _ in range(12):
            k1, k2 = rng.integers(1, 4, size=2)
            a, b = rng.uniform(0.5, 2.0, size=2)
            u = a * np.sin(2 * np.pi * k1 * x) + b * np.cos(np.pi * k2 * y)
            v = rinv_spatial(u, spec)
            vmax = max(float(np.max(np.abs(c))) for c in v)
            consts.append(vmax / (spec.side_lengths() * float(np.max(np.abs(u)))))
        consts = np.array(consts)
        assert consts.max() < 2.0  # finite, O(1)


class TestSpaceTime:
    def test_separable_field_oracle(self):
        # u = g(t) sin(2 pi x): v_t = g'(t) (1-cos 2 pi x)/(2 pi)
        spec = unit_interval(257)
        nt = 33
        t = np.linspace(0.0, 1.0, nt)
        dt = t[1] - t[0]
        x = spec.nodes(0)
        g = 1.0 + 0.5 * np.sin(2 * np.pi * t)
        u = np.sin(2 * np.pi * x)[:, None] * g[None, :]
        res = rinv_spacetime(u, spec, dt)
        v = res.components[0]
        gp = np.gradient(g, dt, edge_order=2)
        vt = np.gradient(v, dt, axis=-1, edge_order=2)
        exact_vt = (1.0 - np.cos(2 * np.pi * x))[:, None] / (2 * np.pi) * gp[None, :]
        assert np.max(np.abs(vt - exact_vt)) < 2e-3
        assert res.time_bound_constant < 2.0

    def test_time_constant_field_has_zero_vt(self):
        spec = unit_interval(129)
        x = spec.nodes(0)
        u = np.tile(np.sin(2 * np.pi * x)[:, None], (1, 9))
        res = rinv_spacetime(u, spec, 0.1)
        vt = np.diff(res.components[0], axis=-1)
        assert np.max(np.abs(vt)) == 0.0

    def test_mean_violation_raises(self):
        spec = unit_interval(65)
        u = np.full((65, 5), 0.1)
        with pytest.raises(errors.MeanNotZeroError):
            rinv_spacetime(u, spec, 0.1)

    def test_commutes_with_time_differencing(self):
        # v_t = R(u_t): central differencing commutes with the linear operator
        spec = unit_interval(129)
        nt = 17
        t = np.linspace(0.0, 1.0, nt)
        x = spec.nodes(0)
        u = np.sin(2 * np.pi * x)[:, None] * np.exp(-t)[None, :]
        res = rinv_spacetime(u, spec, t[1] - t[0])
        v = res.components[0]
        vt = np.gradient(v, t[1] - t[0], axis=-1, edge_order=2)
        ut = np.gradient(u, t[1] - t[0], axis=-1, edge_order=2)
        r_ut = rinv_spacetime(ut, spec, t[1] - t[0]).components[0]
        assert np.max(np.abs(vt - r_ut)) < 1e-12

    def test_bound_constant_stability_across_batches(self):
        # the bound constant is a batch max over a fixed random-field family;
        # batch maxima must agree to +-20%
        spec = unit_interval(129)
        rng = np.random.default_rng(9)
        t = np.linspace(0.0, 1.0, 21)
        x = spec.nodes(0)

        def random_field():
            u = np.zeros((x.size, t.size))
            for k in (1, 2, 3):
                a, b = rng.standard_normal(2)
                u += a * np.sin(2 * np.pi * k * x)[:, None] * np.cos(k * t)[None, :]
                u += b * np.sin(2 * np.pi * k * x)[:, None] * np.sin(k * t)[None, :]
            return u

        batch_maxima = []
        for _ in range(4):
            ratios = [
                rinv_spacetime(random_field(), spec, t[1] - t[0]).time_bound_constant
                for _ in range(8)
            ]
            batch_maxima.append(max(ratios))
        batch_maxima = np.array(batch_maxima)
        mid = np.median(batch_maxima)
        assert np.all(batch_maxima <= 1.2 * mid) and np.all(batch_maxima >= 0.8 * mid), batch_maxima
        assert np.all(np.isfinite(batch_maxima))
