import math

import numpy as np
import pytest

from linfeig.continuation import ContinuationSettings, run_continuation
from linfeig.densities import eta_power_g, power_f, quadratic_g
from linfeig.discretization import Discretization
from linfeig.geometry import DomainSpec, build_grid
from linfeig.measures import (DiscreteMeasure, MeasureError, MeasureKind, assemble_measures,
                              concentration_fraction, mass_bound_M, mass_bounds_report,
                              pairing_residual, pairing_sides, weakstar_trace)
from linfeig.psolver import bump_basis

F, G = power_f(2), eta_power_g(2)


@pytest.fixture(scope="module")
def trace():
    d = Discretization(build_grid(DomainSpec.interval(0, 1), 201), "hinged")
    return run_continuation(F, G, d, settings=ContinuationSettings(p0=4, p_max=128))


@pytest.fixture(scope="module")
def measures(trace):
    return [assemble_measures(F, G, r) for r in trace.results]


class TestDiscreteMeasure:
    def test_uniform_unit_mass(self):
        w = np.full(8, 0.125)
        nu = DiscreteMeasure(MeasureKind.SCALAR, np.ones(8), w, 1.0)
        assert nu.total_variation == 1.0
        assert nu.pair(np.ones(8)) == 1.0

    def test_negative_scalar_rejected(self):
        with pytest.raises(MeasureError):
            DiscreteMeasure(MeasureKind.SCALAR, np.array([1.0, -1e-3]), np.ones(2), 2.0)

    def test_tensor_norm(self):
        dens = np.zeros((2, 1, 2, 2))
        dens[0, 0] = [[3.0, 0.0], [0.0, 4.0]]
        M = DiscreteMeasure(MeasureKind.TENSOR, dens, np.array([1.0, 1.0]), 2.0)
        assert np.allclose(M.node_norm, [5.0, 0.0])
        assert M.total_variation == 2.5
        assert M.pair(np.array([1.0, 1.0])) == 3.5


class TestAssemble:
    def test_nonpositive_lambda(self, trace):
        with pytest.raises(MeasureError):
            assemble_measures(F, G, trace.results[0], Lambda=0.0)
        with pytest.raises(MeasureError):
            assemble_measures(F, G, trace.results[0], Lambda=math.inf)

    def test_nu_mass_at_most_one(self, measures, trace):
        for (M, nu), r in zip(measures, trace.results):
            assert nu.total_variation <= 1 + 1e-8
            assert np.all(nu.density >= 0)
            assert np.all(np.isfinite(M.density))

    def test_nu_mass_p4_and_p128(self, measures):
        assert measures[0][0].p == 4 and measures[-1][0].p == 128
        assert measures[0][1].total_variation <= 1 + 1e-8
        assert measures[-1][1].total_variation <= 1 + 1e-8

    def test_mass_report_positive_margins(self, measures, trace):
        for (M, nu), r in zip(measures, trace.results):
            rep = mass_bounds_report(M, nu, r, F, G)
            assert rep.ok, rep.messages
            assert rep.nu_margin > 0 and rep.M_margin > 0

    def test_halved_lambda_violates_bound(self, trace):
        r = trace.results[-1]
        M, nu = assemble_measures(F, G, r, Lambda=r.Lambda_p / 2)
        M0, _ = assemble_measures(F, G, r)
        assert M.total_variation == pytest.approx(2 ** (r.p - 1) * M0.total_variation, rel=1e-9)
        rep = mass_bounds_report(M, nu, r, F, G)
        assert not rep.ok and "exceeds bound" in rep.messages[0]

    def test_mass_bound_formula(self):
        # (C8/C1)^(1-1/p) (C5 (Lambda+1)^beta + C6) with C8 = C1 = C5 = 2, beta = 1/2
        assert mass_bound_M(F, G, 4, 63.0) == pytest.approx(2 * 8.0)

    def test_concentration_p128(self, measures, trace):
        r = trace.results[-1]
        gv = G.eval(r.u.values, r.u.Du)
        assert concentration_fraction(measures[-1][1], gv) >= 0.9


class TestPairing:
    def test_residual_small(self, measures, trace):
        d = trace.last.u.disc
        basis = bump_basis(d, 20)
        for (M, nu), r in zip(measures, trace.results):
            assert pairing_residual(M, nu, F, G, r, basis) <= max(1e-8, 10 * r.el_residual)

    def test_zero_test_field(self, measures, trace):
        M, nu = measures[-1]
        lhs, rhs, _ = pairing_sides(M, nu, F, G, trace.last, np.zeros(201))
        assert lhs == 0.0 and rhs == 0.0

    def test_misscaled_lambda(self, measures, trace):
        M, nu = measures[-1]
        r = trace.last
        phi = bump_basis(r.u.disc, 5)[2]
        lhs, rhs, _ = pairing_sides(M, nu, F, G, r, phi)
        _, rhs_bad, _ = pairing_sides(M, nu, F, G, r, phi, Lambda=1.1 * r.Lambda_p)
        assert rhs_bad == pytest.approx(1.1 * rhs, rel=1e-12)
        assert abs(rhs_bad - lhs) / abs(lhs) == pytest.approx(0.1, abs=1e-5)
        base = pairing_residual(M, nu, F, G, r, [phi])
        assert pairing_residual(M, nu, F, G, r, [phi], Lambda=1.1 * r.Lambda_p) >= 100 * base

    def test_quadratic_constraint_pairing(self):
        from linfeig.psolver import solve_p, initial_bubble
        d = Discretization(build_grid(DomainSpec.interval(0, 1), 101), "clamped")
        g = quadratic_g()
        r = solve_p(F, g, initial_bubble(d), 6.0)
        M, nu = assemble_measures(F, g, r)
        assert pairing_residual(M, nu, F, g, r, bump_basis(d, 20)) <= max(1e-8, 10 * r.el_residual)


class TestWeakStar:
    def test_constant_test_field_gives_masses(self, measures):
        tab = weakstar_trace(measures, [np.ones(201)])
        assert np.allclose(tab.nu_pairings[0], [nu.total_variation for _, nu in measures],
                           rtol=1e-14)

    def test_cauchy(self, measures, trace):
        x = trace.last.u.disc.grid.coords[:, 0]
        tests = [np.sin(math.pi * x), x * (1 - x), np.exp(-((x - 0.5) / 0.2) ** 2)]
        tab = weakstar_trace(measures, tests)
        assert tab.nu_differences.shape == (3, len(measures) - 1)
        assert np.all(tab.cauchy())

    def test_antisymmetric_field(self, measures, trace):
        x = trace.last.u.disc.grid.coords[:, 0]
        tab = weakstar_trace(measures, [x - 0.5])
        assert np.all(np.abs(tab.nu_pairings) <= 1e-6)
        assert np.all(np.abs(tab.M_pairings) <= 1e-6 * np.array(
            [M.total_variation for M, _ in measures]))

    def test_needs_three_steps(self, measures):
        with pytest.raises(MeasureError):
            weakstar_trace(measures[:2], [np.ones(201)])
