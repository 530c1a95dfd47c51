"""Linear stability, robustness and convergence rate of the fluid model.

Both variants linearize to  du/dt = -(k * a_eff / tau) u(t - tau)  with
a_eff = a (rate mismatch only) or a (1 + rho*) (with queue feedback), so
everything here is a function of the effective gain k * a_eff and tau.
"""

from __future__ import annotations

import cmath
import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .fluid_model import FluidParams, b_for_utilization, equilibrium

HALF_PI = 0.5 * math.pi
A_STAR = math.exp(-1.0)  # gain giving the fastest convergence

_XTOL = 1e-300
_RTOL = 1e-13
_MAXITER = 200


class Branch(str, enum.Enum):
    SIGMA1 = "sigma1"
    SIGMA2 = "sigma2"
    SIGMA3 = "sigma3"
    UNSTABLE = "unstable"


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    margin: float
    kappa_c: float
    effective_gain: float


@dataclass(frozen=True)
class ConvergenceReport:
    sigma: float
    branch: Branch
    sigma_candidates: tuple[float, float, float]


def loop_gain(params: FluidParams) -> float:
    """a(1 + rho*) with queue feedback, a without; kappa not included."""
    if params.with_queue:
        return params.a * (1.0 + equilibrium(params).rho_star)
    return params.a


def stability(params: FluidParams) -> StabilityVerdict:
    base = loop_gain(params)
    gain = params.kappa * base
    if params.with_queue:
        b = params.b * params.sigma2
        kappa_c = 2.0 * math.pi / (params.a * (b + 8.0 - math.sqrt(b * b + 8.0 * b)))
    else:
        kappa_c = HALF_PI / params.a
    return StabilityVerdict(stable=gain < HALF_PI, margin=HALF_PI - gain,
                            kappa_c=kappa_c, effective_gain=gain)


def stability_boundary(a_grid) -> list[tuple[float, float | None]]:
    """Queue gain b on the Hopf boundary a (1 + rho*) = pi/2, for each a.

    Points outside (pi/4, pi/2) have no finite positive b and come back as
    ``(a, None)``.
    """
    out = []
    for a in np.asarray(a_grid, dtype=float).ravel():
        rho = HALF_PI / a - 1.0
        if not 0.0 < rho < 1.0:
            out.append((float(a), None))
            continue
        b = b_for_utilization(rho)
        residual = a * (b + 8.0 - math.sqrt(b * b + 8.0 * b)) / 4.0 - HALF_PI
        if abs(residual) > 1e-10:
            raise ArithmeticError(f"boundary residual {residual:.3e} at a={a}")
        out.append((float(a), b))
    return out


def robust_stability(params: FluidParams) -> bool:
    """Sufficient condition for robust stability: kappa * a_eff < 1."""
    return params.kappa * loop_gain(params) < 1.0


def hayes_g(u: float) -> float:
    """g(u) = u / sin(u) * exp(-u / tan(u)), increasing from 1/e to infinity on (0, pi)."""
    if not 0.0 < u < math.pi:
        raise ValueError(f"u must lie in (0, pi), got {u!r}")
    s = math.sin(u)
    try:
        return u / s * math.exp(-u * math.cos(u) / s)
    except OverflowError:
        return math.inf


def _bisect(fn, lo, hi):
    return bisect(fn, lo, hi, xtol=_XTOL, rtol=_RTOL, maxiter=_MAXITER)


def _sigma2_scaled(gain: float) -> float:
    """Root of x e^{-x} = gain on (0, 1]; +inf when gain > 1/e."""
    fn = lambda x: x * math.exp(-x) - gain
    top = fn(1.0)
    if top < 0.0:
        return math.inf
    if top == 0.0:
        return 1.0
    return _bisect(fn, 0.0, 1.0)


def _sigma3_scaled(gain: float) -> float:
    """sigma*tau = u / tan(u) where g(u) = gain; +inf when gain <= 1/e."""
    if gain <= A_STAR:
        return math.inf
    lo, hi = 1e-12, math.pi - 1e-9
    if hayes_g(lo) >= gain:
        return 1.0
    if hayes_g(hi) <= gain:
        return -math.inf
    u = _bisect(lambda v: hayes_g(v) - gain, lo, hi)
    return u / math.tan(u)


def convergence_rate(effective_a: float, tau: float) -> ConvergenceReport:
    """Exponential decay rate of the linearized loop with gain ``effective_a``.

    sigma = min(sigma1, sigma2, sigma3) with sigma1 = 1/tau, sigma2 from
    x e^{-x} = a and sigma3 from g(u) = a, x = u / tan(u); candidates with
    no solution are +inf.
    """
    if not effective_a > 0:
        raise ValueError(f"effective gain must be positive, got {effective_a!r}")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    s1 = 1.0 / tau
    s2 = _sigma2_scaled(effective_a) / tau
    s3 = _sigma3_scaled(effective_a) / tau
    if effective_a >= HALF_PI:
        return ConvergenceReport(0.0, Branch.UNSTABLE, (s1, s2, max(s3, 0.0)))
    sigma = min(s1, s2, s3)
    # at a = 1/e sigma1 and sigma2 coincide; report sigma2
    if sigma == s2:
        branch = Branch.SIGMA2
    elif sigma == s3:
        branch = Branch.SIGMA3
    else:
        branch = Branch.SIGMA1
    return ConvergenceReport(sigma, branch, (s1, s2, s3))


def lambert_w0(z: complex, tol: float = 1e-12, maxiter: int = 100) -> complex:
    """Principal branch of Lambert W by Halley iteration."""
    z = complex(z)
    if z == 0:
        return 0j
    if abs(z + A_STAR) < 1e-300:
        return complex(-1.0)
    # branch-point series near -1/e, asymptotic log form elsewhere
    if abs(math.e * z + 1.0) < 2.0:
        p = cmath.sqrt(2.0 * (math.e * z + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif z.real > 0 and abs(z) < 3.0:
        w = cmath.log(1.0 + z)
    else:
        lz = cmath.log(z)
        w = lz - cmath.log(lz)
    for _ in range(maxiter):
        ew = cmath.exp(w)
        f = w * ew - z
        wp1 = w + 1.0
        if wp1 == 0:
            break
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= tol * (1.0 + abs(w)):
            return w
    raise ArithmeticError(f"Halley iteration for W0({z}) did not converge")


def rightmost_root(effective_a: float, tau: float) -> complex:
    """Characteristic root of lambda + (a/tau) e^{-lambda tau} = 0 with largest real part."""
    if not effective_a > 0:
        raise ValueError(f"effective gain must be positive, got {effective_a!r}")
    lam = lambert_w0(-effective_a) / tau
    residual = abs(lam + effective_a / tau * cmath.exp(-lam * tau))
    if residual > 1e-9 * effective_a / tau * max(1.0, abs(lam * tau)):
        raise ArithmeticError(f"root residual {residual:.3e} too large")
    return lam
