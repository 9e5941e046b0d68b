import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajsum.basisfn import (BasisSpec, DomainError, InvalidBasisSpec, TimeGrid, UniformWeight,
                             endpoint_slope_vector, eval_design, make_basis, quadrature_rule,
                             segment_points, weighted_slope_integral)
from trajsum.simgen import QUADRATIC_BETAS


def cox_de_boor(t, knots, degree):
    """Textbook recursion, independent of scipy; right end point closes the last interval."""
    knots = np.asarray(knots, float)
    n = len(knots) - degree - 1
    B = np.zeros((len(knots) - 1,))
    for i in range(len(knots) - 1):
        if knots[i] <= t < knots[i + 1]:
            B[i] = 1.0
    if t == knots[-1]:
        last = np.flatnonzero(knots < knots[-1]).max()
        B[last] = 1.0
    for d in range(1, degree + 1):
        new = np.zeros(len(knots) - d - 1)
        for i in range(len(new)):
            left = 0.0 if knots[i + d] == knots[i] else (t - knots[i]) / (knots[i + d] - knots[i]) * B[i]
            right = 0.0 if knots[i + d + 1] == knots[i + 1] else (
                (knots[i + d + 1] - t) / (knots[i + d + 1] - knots[i + 1]) * B[i + 1])
            new[i] = left + right
        B = new
    return B[:n]


def full_knots(lo, hi, interior, degree):
    return [lo] * (degree + 1) + list(interior) + [hi] * (degree + 1)


interior_knots = st.lists(st.floats(0.3, 6.7), min_size=0, max_size=4, unique=True).map(sorted).filter(
    lambda k: all(b - a > 0.05 for a, b in zip(k, k[1:])))


@given(interior_knots, st.integers(1, 3), st.floats(0, 7))
def test_bspline_matches_cox_de_boor(knots, degree, t):
    basis = make_basis(BasisSpec.bspline((0, 7), knots, degree=degree))
    expect = cox_de_boor(t, full_knots(0, 7, knots, degree), degree)
    np.testing.assert_allclose(basis.values([t])[0], expect, atol=1e-12)


@given(interior_knots, st.lists(st.floats(0, 7), min_size=1, max_size=20))
def test_partition_of_unity(knots, ts):
    basis = make_basis(BasisSpec.bspline((0, 7), knots))
    np.testing.assert_allclose(basis.values(ts).sum(axis=1), 1.0, atol=1e-12)


def test_bspline_dim_and_default_knot():
    spec = BasisSpec.bspline((0, 7))
    assert spec.interior_knots == (3.5,)
    assert spec.dim == 5
    assert make_basis(spec).breakpoints == (0.0, 3.5, 7.0)


def test_polynomial_values_derivative_integral(quad_basis):
    t = np.array([0.0, 1.5, 7.0])
    np.testing.assert_allclose(quad_basis.values(t), np.column_stack([t ** 0, t, t ** 2]))
    np.testing.assert_allclose(quad_basis.derivative(t), np.column_stack([0 * t, t ** 0, 2 * t]))
    np.testing.assert_allclose(quad_basis.integral(1, 3), [2.0, 4.0, 26 / 3])
    np.testing.assert_allclose(quad_basis.integral(), [7.0, 24.5, 343 / 3])


@given(st.floats(0.01, 6.99))
def test_spline_derivative_matches_finite_difference(t):
    basis = make_basis(BasisSpec.bspline((0, 7), [2.0, 4.5]))
    h = 1e-6
    fd = (basis.values([t + h]) - basis.values([t - h]))[0] / (2 * h)
    np.testing.assert_allclose(basis.derivative([t])[0], fd, atol=1e-5)


@given(st.floats(0, 7), st.floats(0, 7))
def test_spline_integral_matches_quadrature(a, b):
    basis = make_basis(BasisSpec.bspline((0, 7), [2.0, 4.5]))
    lo, hi = min(a, b), max(a, b)
    if hi - lo < 1e-9:
        return
    nodes, w = quadrature_rule(segment_points((lo, hi), basis.breakpoints))
    np.testing.assert_allclose(basis.integral(lo, hi), w @ basis.values(nodes), atol=1e-11)


def test_quadrature_exact_for_polynomials():
    nodes, w = quadrature_rule([0, 2.5, 7], n_nodes=8)
    for k in range(16):
        assert w @ nodes ** k == pytest.approx(7 ** (k + 1) / (k + 1), rel=1e-12)


def test_domain_checked(quad_basis):
    with pytest.raises(DomainError):
        quad_basis.values([7.5])
    with pytest.raises(DomainError):
        quad_basis.derivative([-0.1])
    quad_basis.values([7.0 + 1e-12])


@pytest.mark.parametrize("spec", [
    BasisSpec.bspline((0, 7), [0.0]),
    BasisSpec.bspline((0, 7), [4.0, 3.0]),
    BasisSpec.bspline((0, 7), [8.0]),
    BasisSpec.polynomial(-1, (0, 7)),
    BasisSpec("fourier", (0, 7)),
    BasisSpec.polynomial(2, (3, 3)),
])
def test_invalid_specs_rejected(spec):
    with pytest.raises(InvalidBasisSpec):
        make_basis(spec)


def test_config_round_trip():
    for spec in (BasisSpec.polynomial(3, (0, 7)), BasisSpec.bspline((0, 7), [2, 5])):
        assert BasisSpec.from_config(spec.to_config(), (0, 7)) == spec
    with pytest.raises(InvalidBasisSpec):
        BasisSpec.from_config({"kind": "wavelet"}, (0, 7))


def test_time_grid_validation():
    with pytest.raises(InvalidBasisSpec):
        TimeGrid((0.0,))
    with pytest.raises(InvalidBasisSpec):
        TimeGrid((0.0, 2.0, 1.0))
    g = TimeGrid((0, 1, 2, 3, 4, 6, 8))
    assert g.index(6) == 5 and g.span == 8
    with pytest.raises(DomainError):
        g.index(5)


def test_eval_design_empty(quad_basis):
    assert eval_design(quad_basis, []).shape == (0, 3)
    assert eval_design(quad_basis, [1.0, 2.0]).shape == (2, 3)


@pytest.mark.parametrize("spec", [BasisSpec.polynomial(2, (0, 7)), BasisSpec.bspline((0, 7)),
                                  BasisSpec.bspline((0, 7), [1, 2, 5])])
def test_uniform_weight_integral_is_endpoint_slope(spec, grid):
    basis = make_basis(spec)
    S = weighted_slope_integral(basis, UniformWeight((0.0, 7.0)))
    np.testing.assert_allclose(S, endpoint_slope_vector(basis, grid), atol=1e-13)


@pytest.mark.parametrize("group, ats", [(1, -0.6), (2, -0.9), (3, -0.6)])
def test_quadratic_ats(group, ats, quad_basis, grid):
    beta = np.array(QUADRATIC_BETAS[group])
    G = endpoint_slope_vector(quad_basis, grid)
    assert abs(G @ beta - ats) < 1e-12
    S = weighted_slope_integral(quad_basis, UniformWeight((0.0, 7.0)))
    assert abs(S @ beta - ats) < 1e-12


def test_negative_weight_rejected(quad_basis):
    with pytest.raises(ValueError):
        weighted_slope_integral(quad_basis, lambda t: np.sin(t))
