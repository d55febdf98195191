import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linfeig.geometry import (DomainSpec, GeometryError, ProjectionNotUnique, UpperBoundUnavailable,
                              area_tolerance, boundary_projection, build_grid, descriptors)

# Monte-Carlo area of the unit disc: 2e7 uniform points in [-1, 1]^2,
# numpy default_rng(12345); standard error 3.7e-4.
MC_DISC_AREA = 3.1411662
MC_DISC_STDERR = 3.7e-4


class TestDomainSpec:
    def test_invalid_shapes(self):
        with pytest.raises(GeometryError):
            DomainSpec.interval(1.0, 0.0)
        with pytest.raises(GeometryError):
            DomainSpec.rectangle(0, 1, 1, 1)
        with pytest.raises(GeometryError):
            DomainSpec.disc((0, 0), 0.0)
        with pytest.raises(GeometryError):
            DomainSpec.interval(0, 1, target_dim=0)

    def test_dims_and_measure(self):
        assert DomainSpec.interval(0, 2).dim == 1
        assert DomainSpec.disc().dim == 2
        assert DomainSpec.rectangle(0, 2, 0, 3).measure == 6.0
        assert DomainSpec.disc(radius=2).measure == pytest.approx(4 * math.pi)


class TestBuildGrid:
    def test_interval_five_nodes(self):
        g = build_grid(DomainSpec.interval(0, 1), 5)
        assert g.spacing == (0.25,)
        assert g.boundary.sum() == 2
        assert g.measure == pytest.approx(1.0, rel=1e-10)

    def test_resolution_too_small(self):
        with pytest.raises(GeometryError):
            build_grid(DomainSpec.interval(0, 1), 4)

    def test_unit_square(self):
        g = build_grid(DomainSpec.rectangle(0, 1, 0, 1), 11)
        assert g.measure == pytest.approx(1.0, rel=1e-10)
        assert g.boundary.sum() == 40
        _assert_boundary_adjacent(g)

    def test_disc_area_against_monte_carlo(self):
        g = build_grid(DomainSpec.disc((0, 0), 1.0), 41)
        tol = area_tolerance(g)
        assert tol == pytest.approx(2 * 2 / 40)
        assert abs(g.measure - MC_DISC_AREA) <= tol + 3 * MC_DISC_STDERR
        _assert_boundary_adjacent(g)

    @pytest.mark.parametrize("res", [21, 41, 81])
    def test_disc_area_within_declared_tolerance(self, res):
        g = build_grid(DomainSpec.disc((0.3, -0.2), 1.5), res)
        assert abs(g.measure - math.pi * 1.5**2) <= area_tolerance(g)

    def test_uniform_spacing(self):
        g = build_grid(DomainSpec.rectangle(0, 2, 0, 1), 9)
        xs = np.unique(g.coords[:, 0])
        assert np.allclose(np.diff(xs), g.spacing[0])


def _assert_boundary_adjacent(g):
    """Every boundary node has an interior 8-neighbour."""
    nb = g.neighbour_table()
    diag = g.diagonal_neighbours()
    interior = g.interior
    for i in np.flatnonzero(g.boundary):
        cand = [j for j in list(nb[i, :, 2]) + list(nb[i, :, 4]) + list(diag[i]) if j >= 0]
        assert any(interior[j] for j in cand)


class TestDescriptors:
    def test_disc(self):
        d = descriptors(DomainSpec.disc((0, 0), 1.0))
        assert d.diameter == 2.0
        assert d.perimeter == pytest.approx(2 * math.pi)
        assert d.curvature_sup_norms() == (1.0,)

    def test_interval(self):
        d = descriptors(DomainSpec.interval(0, 1))
        assert d.diameter == 1.0
        assert d.poincare_const_clamped == 1.0

    def test_rectangle_curvature_unavailable(self):
        d = descriptors(DomainSpec.rectangle(0, 1, 0, 1))
        assert d.diameter == pytest.approx(1.41421, abs=1e-5)
        assert d.perimeter == 4.0
        with pytest.raises(UpperBoundUnavailable):
            d.curvature_sup_norms()

    @pytest.mark.parametrize("dom", [DomainSpec.interval(0, 3), DomainSpec.disc(radius=0.1),
                                     DomainSpec.disc(radius=50.0), DomainSpec.rectangle(0, 1, 0, 2)])
    def test_eps0_side_condition(self, dom):
        d = descriptors(dom)
        assert 0 < d.eps0 < 1
        if d.principal_curvatures:
            assert d.eps0 < 1 / max(d.principal_curvatures)
        assert d.poincare_const_clamped == d.diameter

    def test_deterministic(self):
        dom = DomainSpec.disc((0.1, 0.2), 0.7)
        assert descriptors(dom) == descriptors(dom)


class TestBoundaryProjection:
    def test_disc_radial(self):
        proj, dist = boundary_projection(DomainSpec.disc(), (0.5, 0.0))
        assert np.allclose(proj, (1.0, 0.0))
        assert dist == pytest.approx(0.5)

    def test_interval(self):
        proj, dist = boundary_projection(DomainSpec.interval(0, 1), 0.3)
        assert proj[0] == 0.0
        assert dist == pytest.approx(0.3)

    def test_disc_centre_not_unique(self):
        with pytest.raises(ProjectionNotUnique, match="not unique"):
            boundary_projection(DomainSpec.disc(), (0.0, 0.0))

    def test_rectangle_unsupported(self):
        with pytest.raises(UpperBoundUnavailable):
            boundary_projection(DomainSpec.rectangle(0, 1, 0, 1), (0.5, 0.5))

    @settings(max_examples=200, deadline=None)
    @given(r=st.floats(1e-3, 1.0), theta=st.floats(0, 2 * math.pi),
           cx=st.floats(-5, 5), cy=st.floats(-5, 5), R=st.floats(0.1, 10))
    def test_disc_distance_identity(self, r, theta, cx, cy, R):
        dom = DomainSpec.disc((cx, cy), R)
        x = np.array([cx + r * R * math.cos(theta), cy + r * R * math.sin(theta)])
        proj, dist = boundary_projection(dom, x)
        scale = max(1.0, R + abs(cx) + abs(cy))
        assert abs(dist + np.hypot(*(x - (cx, cy))) - R) <= 1e-12 * scale
        assert abs(np.hypot(*(proj - (cx, cy))) - R) <= 1e-12 * scale
        assert abs(np.hypot(*(x - proj)) - dist) <= 1e-12 * scale
