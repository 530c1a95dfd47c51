from fractions import Fraction

import math

import pytest
from hypothesis import given, strategies as st

from rcpfeedback.fluid_model import (
    FluidParams, TaylorCoeffs, Variant, b_for_utilization, equilibrium, mean_queue, rhs,
    taylor_coeffs, utilization_from_b,
)

EX1 = dict(a=1.01, C=10.0, tau=100.0, b=0.736)


def test_equilibrium_example1():
    # R* = 5.5 for b = 0.736 (utilization 55%)
    eq = equilibrium(FluidParams(**EX1))
    assert eq.R_star == pytest.approx(5.5, abs=1e-3)
    assert eq.rho_star == pytest.approx(0.55, abs=1e-4)


def test_without_queue_equilibrium_is_gamma_C():
    eq = equilibrium(FluidParams(a=1.0, C=10.0, tau=1.0, gamma=0.95, variant="without-queue"))
    assert eq.R_star == pytest.approx(9.5, rel=1e-15)


@given(st.floats(min_value=1e-6, max_value=50.0))
def test_equilibrium_residual(b):
    C = 10.0
    p = FluidParams(a=1.0, C=C, tau=1.0, b=b)
    R = equilibrium(p).R_star
    residual = C - R - b * C * mean_queue(R, C)
    assert abs(residual) <= 1e-12 * C


@given(st.floats(min_value=1e-6, max_value=0.999))
def test_b_rho_round_trip(rho):
    assert utilization_from_b(b_for_utilization(rho)) == pytest.approx(rho, rel=1e-12, abs=1e-12)


def test_sigma2_enters_through_product_with_b():
    p = FluidParams(a=1.0, C=10.0, tau=1.0, b=0.2, sigma2=3.0)
    q = FluidParams(a=1.0, C=10.0, tau=1.0, b=0.6)
    assert equilibrium(p).rho_star == pytest.approx(equilibrium(q).rho_star, rel=1e-15)


@pytest.mark.parametrize("field,value", [("a", 0.0), ("C", -1.0), ("tau", math.inf), ("kappa", 0.0)])
def test_rejects_nonpositive(field, value):
    kwargs = dict(EX1)
    kwargs[field] = value
    with pytest.raises(ValueError, match=field):
        FluidParams(**kwargs)


def test_rejects_bad_gamma_and_b():
    with pytest.raises(ValueError, match="gamma"):
        FluidParams(a=1.0, C=1.0, tau=1.0, gamma=1.5, variant=Variant.WITHOUT_QUEUE)
    with pytest.raises(ValueError, match="b"):
        FluidParams(a=1.0, C=1.0, tau=1.0, b=-0.1)
    with pytest.raises(ValueError):
        b_for_utilization(1.0)


def test_rhs_at_equilibrium_vanishes():
    p = FluidParams(**EX1)
    R = equilibrium(p).R_star
    assert abs(rhs(p, R, R)) < 1e-15


def test_rhs_queue_pole():
    p = FluidParams(**EX1)
    with pytest.raises(ValueError, match="pole"):
        rhs(p, 5.0, 10.0)
    with pytest.raises(ValueError):
        mean_queue(10.0, 10.0)


def _fd_coeffs(params: FluidParams, h_rel: float = 1e-5) -> dict:
    """Central differences of the kappa-free right-hand side in exact arithmetic."""
    F = Fraction
    exact = FluidParams(a=F(params.a), C=F(params.C), tau=F(params.tau), b=F(params.b),
                        kappa=F(1), gamma=F(params.gamma), sigma2=F(1), variant=params.variant)
    R = F(equilibrium(params).R_star)
    h = F(h_rel) * R

    def f(x, y):
        return rhs(exact, R + x, R + y)

    fy = (f(0, h) - f(0, -h)) / (2 * h)
    fxy = (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h * h)
    fyy = (f(0, h) - 2 * f(0, 0) + f(0, -h)) / (h * h)
    fyyy = (f(0, 2 * h) - 2 * f(0, h) + 2 * f(0, -h) - f(0, -2 * h)) / (2 * h ** 3)
    fxyy = ((f(h, h) - 2 * f(h, 0) + f(h, -h)) - (f(-h, h) - 2 * f(-h, 0) + f(-h, -h))) / (2 * h ** 3)
    return {"xi_y": fy, "xi_xy": fxy, "xi_yy": fyy / 2, "xi_xyy": fxyy / 2, "xi_yyy": fyyy / 6}


@pytest.mark.parametrize("b", [0.736, 0.257, 0.022, 2.0])
def test_taylor_coefficients_match_finite_differences(b):
    params = FluidParams(a=0.9, C=10.0, tau=100.0, b=b)
    coeffs = taylor_coeffs(params)
    for name, fd in _fd_coeffs(params).items():
        assert getattr(coeffs, name) == pytest.approx(float(fd), rel=1e-5), name


def test_taylor_without_queue_matches_finite_differences():
    params = FluidParams(a=1.3, C=10.0, tau=2.0, gamma=0.95, variant="without-queue")
    coeffs = taylor_coeffs(params)
    fd = _fd_coeffs(params)
    assert coeffs.xi_y == pytest.approx(float(fd["xi_y"]), rel=1e-5)
    assert coeffs.xi_xy == pytest.approx(float(fd["xi_xy"]), rel=1e-5)
    for name in ("xi_yy", "xi_xyy", "xi_yyy"):
        assert abs(float(fd[name])) < 1e-9
        assert getattr(coeffs, name) == 0.0


def test_scaled_coeffs():
    c = TaylorCoeffs(xi_y=-1.0, xi_xy=2.0, xi_yyy=3.0)
    assert c.scaled(2.0).as_tuple() == (-2.0, 4.0, 0.0, 0.0, 6.0, 0.0, 0.0, 0.0)
