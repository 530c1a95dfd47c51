"""Criticality of the first Hopf bifurcation.

The sign of mu2 decides the type: positive gives a supercritical
bifurcation with small stable limit cycles, negative a subcritical one.
For the general single-delay equation

    du/dt = eta * (-b u(t-tau) + sum of quadratic and cubic terms)

mu2 is an explicit combination of the Taylor coefficients.  The fluid model
maps onto it with eta = kappa and b = -xi_y.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from scipy.optimize import bisect

from .fluid_model import FluidParams, TaylorCoeffs, equilibrium, taylor_coeffs
from .linear_analysis import stability

PI = math.pi
DEGENERATE_TOL = 1e-10
# sqrt(20 pi / (3 pi - 2)): limit-cycle amplitude per unit R* sqrt(kappa - kappa_c)
AMPLITUDE_FACTOR = math.sqrt(20.0 * PI / (3.0 * PI - 2.0))


class Criticality(str, enum.Enum):
    SUPERCRITICAL = "supercritical"
    SUBCRITICAL = "subcritical"
    DEGENERATE = "degenerate"


@dataclass(frozen=True)
class HopfReport:
    kappa_c: float
    mu2: float
    criticality: Criticality
    amplitude_coefficient: float | None = None
    mu2_closed_form: float | None = None
    numerator: float | None = None


def classify(value: float, tol: float = DEGENERATE_TOL) -> Criticality:
    if value > tol:
        return Criticality.SUPERCRITICAL
    if value < -tol:
        return Criticality.SUBCRITICAL
    return Criticality.DEGENERATE


def mu2_general(coeffs: TaylorCoeffs, b_lin: float) -> float:
    """mu2 for the general equation with linear gain ``b_lin`` > 0.

    ``coeffs.xi_y`` is not used; the linear term enters only through
    ``b_lin``.
    """
    if not b_lin > 0:
        raise ValueError(f"linear gain must be positive, got {b_lin!r}")
    c = coeffs
    b = b_lin
    quad = (
        c.xi_xx ** 2 * 4.0 * (PI - 9.0)
        + c.xi_xy ** 2 * (3.0 * PI - 2.0)
        + c.xi_yy ** 2 * 2.0 * (11.0 * PI - 4.0)
        + c.xi_xx * c.xi_xy * (7.0 * PI - 18.0)
        + c.xi_xx * c.xi_yy * 2.0 * (7.0 * PI - 18.0)
        + c.xi_xy * c.xi_yy * (7.0 * PI - 18.0)
    ) / (5.0 * b)
    cubic = -6.0 * c.xi_xxx + PI * c.xi_xxy - 2.0 * c.xi_xyy + 3.0 * PI * c.xi_yyy
    return (quad + cubic) / (PI * b)


def mu2_quadratics_only(xi_xy: float, xi_yy: float, xi_y: float) -> float:
    if xi_y == 0:
        raise ValueError("xi_y must be nonzero")
    return (
        xi_xy ** 2 * (3.0 * PI - 2.0)
        + xi_yy ** 2 * 2.0 * (11.0 * PI - 4.0)
        + xi_xy * xi_yy * (7.0 * PI - 18.0)
    ) / (5.0 * PI * xi_y ** 2)


def mu2_cubics_only(xi_xyy: float, xi_yyy: float, xi_y: float) -> float:
    if xi_y == 0:
        raise ValueError("xi_y must be nonzero")
    return 2.0 * xi_xyy / (PI * xi_y) - 3.0 * xi_yyy / xi_y


def mu2_from_coeffs(coeffs: TaylorCoeffs) -> float:
    """mu2 of the fluid model's expansion, written directly in the xi's."""
    return (mu2_quadratics_only(coeffs.xi_xy, coeffs.xi_yy, coeffs.xi_y)
            + mu2_cubics_only(coeffs.xi_xyy, coeffs.xi_yyy, coeffs.xi_y))


def mu2_numerator(rho: float) -> float:
    """Sign-determining polynomial of the queue-feedback mu2."""
    return ((3 * PI - 2) * rho ** 4 - (22 * PI - 8) * rho ** 3 - (4 - PI) * rho ** 2
            + (7 * PI - 8) * rho + (3 * PI - 2))


def mu2_closed_form(rho: float, C: float) -> float:
    if not 0 < rho < 1:
        raise ValueError(f"rho* must lie in (0, 1), got {rho!r}")
    return mu2_numerator(rho) / (C * C * 5.0 * PI * rho ** 2 * (1.0 - rho ** 2) ** 2)


def mu2_with_queue(params: FluidParams) -> tuple[float, float]:
    """mu2 by coefficient substitution and by the closed form in rho*.

    The two must agree; the caller decides how strictly.
    """
    if not params.with_queue:
        raise ValueError("queue-feedback variant required")
    rho = equilibrium(params).rho_star
    if not 0 < rho < 1:
        raise ValueError(f"rho* must lie in (0, 1), got {rho!r}")
    return mu2_from_coeffs(taylor_coeffs(params)), mu2_closed_form(rho, params.C)


def critical_utilization() -> float:
    """Utilization at which the queue-feedback bifurcation turns subcritical."""
    return bisect(mu2_numerator, 0.0, 1.0, xtol=1e-14, rtol=1e-14, maxiter=200)


def supercritical_amplitude(params: FluidParams, kappa: float) -> float:
    """Predicted limit-cycle amplitude without queue feedback, R* sqrt(20 pi (k - k_c)/(3 pi - 2))."""
    if params.with_queue:
        raise ValueError("amplitude law applies to the rate-mismatch-only variant")
    kappa_c = 0.5 * PI / params.a
    if kappa < kappa_c:
        raise ValueError(f"kappa={kappa!r} below the critical value {kappa_c!r}")
    return equilibrium(params).R_star * AMPLITUDE_FACTOR * math.sqrt(kappa - kappa_c)


def hopf_report(params: FluidParams) -> HopfReport:
    kappa_c = stability(params).kappa_c
    coeffs = taylor_coeffs(params)
    if not params.with_queue:
        mu2 = mu2_general(coeffs, -coeffs.xi_y)
        return HopfReport(kappa_c=kappa_c, mu2=mu2, criticality=Criticality.SUPERCRITICAL,
                          amplitude_coefficient=equilibrium(params).R_star * AMPLITUDE_FACTOR)
    mu2, closed = mu2_with_queue(params)
    rho = equilibrium(params).rho_star
    numerator = mu2_numerator(rho)
    return HopfReport(kappa_c=kappa_c, mu2=mu2, criticality=classify(numerator),
                      mu2_closed_form=closed, numerator=numerator)
