import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmono.hilbert import GridFunction
from fracmono.mesh import (FracParams, auto_zmesh, default_truncation,
                           graded_zmesh, pullback_to_t, t_of_z, z_of_t)


class TestFracParams:
    @pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.75, 0.9])
    def test_derived_consistency(self, s):
        p = FracParams(s)
        assert p.alpha == pytest.approx(1 - 2 * s, abs=1e-15)
        assert p.zexp == pytest.approx((1 - 2 * s) / s, abs=1e-15)
        assert p.underline_s == pytest.approx((1 - s) / (2 * s), abs=1e-15)
        assert p.overline_s == pytest.approx((3 * s - 1) / (2 * s), abs=1e-15)
        assert p.trace_const == pytest.approx((2 * s) ** (1 - 2 * s), abs=1e-15)

    def test_trace_const_at_half(self):
        assert FracParams(0.5).trace_const == 1.0

    @pytest.mark.parametrize("s", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_bad_s(self, s):
        with pytest.raises(ValueError):
            FracParams(s)


class TestGradedMesh:
    def test_uniform(self):
        mesh = graded_zmesh(8, 1.0, 1.0)
        assert np.allclose(mesh.nodes, np.arange(9) / 8.0)

    def test_squares(self):
        mesh = graded_zmesh(8, 1.0, 2.0)
        assert np.allclose(mesh.nodes, (np.arange(9) / 8.0) ** 2)
        assert mesh.nodes[1] == pytest.approx(1.0 / 64.0)

    def test_refinement_grading_monotone(self):
        m1 = graded_zmesh(16, 1.0, 2.0)
        m2 = graded_zmesh(32, 1.0, 2.0)
        # doubling N refines everywhere near 0
        assert m2.nodes[1] < m1.nodes[1]
        assert np.min(np.diff(m2.nodes)) < np.min(np.diff(m1.nodes))

    def test_rejects_small(self):
        with pytest.raises(ValueError):
            graded_zmesh(4, 1.0, 1.0)

    def test_auto_needs_curvature_or_zmax(self):
        p = FracParams(0.5)
        with pytest.raises(ValueError):
            auto_zmesh(p, curvature=None, z_max=None)
        mesh = auto_zmesh(p, N=16, curvature=4.0)
        assert mesh.Z == pytest.approx(default_truncation(p, 4.0))


class TestChangeOfVariable:
    def test_identity_at_half(self):
        p = FracParams(0.5)
        t = np.linspace(0, 5, 50)
        assert np.allclose(z_of_t(p, t), t)

    def test_quarter_direct(self):
        p = FracParams(0.25)
        # t = 0.5 * z^2, so z = 2 gives t = 2
        assert t_of_z(p, 2.0) == pytest.approx(2.0, rel=1e-14)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(1e-6, 1e3), st.floats(0.05, 0.95))
    def test_round_trip(self, z, s):
        p = FracParams(s)
        assert z_of_t(p, t_of_z(p, z)) == pytest.approx(z, rel=1e-13)

    def test_round_trip_sampled(self, rng):
        p = FracParams(0.3)
        z = rng.uniform(1e-4, 100.0, 100)
        assert np.allclose(z_of_t(p, t_of_z(p, z)), z, rtol=1e-13)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            z_of_t(FracParams(0.5), -1.0)


class TestPullback:
    def test_identity_at_half(self):
        p = FracParams(0.5)
        mesh = graded_zmesh(32, 5.0, 2.0)
        f = GridFunction(mesh, np.exp(-mesh.nodes)[:, None])
        g = pullback_to_t(p, f)
        assert np.allclose(g.mesh.nodes, mesh.nodes)
        assert np.allclose(g.values, f.values)

    def test_constant(self):
        p = FracParams(0.3)
        mesh = graded_zmesh(32, 5.0, 2.0)
        f = GridFunction(mesh, np.full((33, 2), 1.5))
        g = pullback_to_t(p, f)
        assert np.allclose(g.values, 1.5)

    def test_symbolic_substitution(self):
        # v(z) = e^{-2z} at s = 1/4: u(t) = v(z(t)) with z = sqrt(2 t)
        p = FracParams(0.25)
        mesh = graded_zmesh(64, 5.0, 2.0)
        f = GridFunction(mesh, np.exp(-2.0 * mesh.nodes)[:, None])
        g = pullback_to_t(p, f)
        t = g.mesh.nodes
        assert np.allclose(g.values[:, 0], np.exp(-2.0 * np.sqrt(2.0 * t)),
                           rtol=1e-12)

    def test_derivative_transport_exact_on_exact_data(self):
        # the transport is pure algebra: exact derivative data stays exact
        p = FracParams(0.75)
        mesh = graded_zmesh(64, 4.0, 2.0)
        z = mesh.nodes
        dv = GridFunction(mesh, (-2.0 * np.exp(-2.0 * z))[:, None])
        g = pullback_to_t(p, dv, derivative=True)
        z_int = z[1:]
        du_exact = -2.0 * np.exp(-2.0 * z_int) * \
            z_int ** (-(1 - 2 * p.s) / (2 * p.s))
        assert np.allclose(g.values[:, 0], du_exact, rtol=1e-12)

    @pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
    def test_derivative_chain_rule_order(self, s):
        # centered differences of v on the z-grid, transported to t, converge
        # to the analytic du/dt at second order in the interior
        p = FracParams(s)
        errs = []
        for N in (128, 256, 512):
            mesh = graded_zmesh(N, 4.0, 2.0)
            z = mesh.nodes
            v = np.exp(-2.0 * z)
            dv = np.zeros_like(z)
            dv[1:-1] = (v[2:] - v[:-2]) / (z[2:] - z[:-2])
            g = pullback_to_t(p, GridFunction(mesh, dv[:, None]),
                              derivative=True)
            t = g.mesh.nodes
            z_int = z[1:]
            du_exact = -2.0 * np.exp(-2.0 * z_int) * \
                z_int ** (-(1 - 2 * s) / (2 * s))
            lo, hi = N // 4, 3 * N // 4
            errs.append(np.max(np.abs(g.values[lo:hi, 0] - du_exact[lo:hi])))
        rates = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
        assert min(rates) >= 1.9
