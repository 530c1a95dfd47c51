"""Single-bottleneck RCP fluid model with and without queue feedback.

The router's fair rate R(t) obeys

    dR/dt = k a R(t) / (C tau) * (C - y - b C p(y)),     y = R(t - tau)

with the mean-queue approximation p(y) = y sigma^2 / (2 (C - y)).  Dropping the
queue term and replacing C by gamma*C gives the rate-mismatch-only variant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class Variant(str, enum.Enum):
    WITH_QUEUE = "with-queue"
    WITHOUT_QUEUE = "without-queue"


@dataclass(frozen=True)
class FluidParams:
    a: float
    C: float
    tau: float
    b: float = 0.0
    kappa: float = 1.0
    gamma: float = 1.0
    sigma2: float = 1.0
    variant: Variant = Variant.WITH_QUEUE

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        for name in ("a", "C", "tau", "kappa", "sigma2"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")
        if self.variant is Variant.WITH_QUEUE and not self.b >= 0:
            raise ValueError(f"b must be >= 0, got {self.b!r}")
        if self.variant is Variant.WITHOUT_QUEUE and not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma!r}")

    @property
    def with_queue(self) -> bool:
        return self.variant is Variant.WITH_QUEUE

    def replace(self, **changes) -> "FluidParams":
        fields = {
            "a": self.a, "C": self.C, "tau": self.tau, "b": self.b,
            "kappa": self.kappa, "gamma": self.gamma, "sigma2": self.sigma2,
            "variant": self.variant,
        }
        fields.update(changes)
        return FluidParams(**fields)


@dataclass(frozen=True)
class Equilibrium:
    R_star: float
    rho_star: float


@dataclass(frozen=True)
class TaylorCoeffs:
    """Polynomial coefficients of the cubic expansion about equilibrium.

    x is the undelayed deviation u(t), y the delayed one u(t - tau).  Values
    are kappa-free; callers multiply by kappa where it matters.
    """

    xi_y: float
    xi_xy: float = 0.0
    xi_yy: float = 0.0
    xi_xyy: float = 0.0
    xi_yyy: float = 0.0
    xi_xx: float = 0.0
    xi_xxx: float = 0.0
    xi_xxy: float = 0.0

    def scaled(self, factor: float) -> "TaylorCoeffs":
        return TaylorCoeffs(*(factor * v for v in self.as_tuple()))

    def as_tuple(self) -> tuple[float, ...]:
        return (self.xi_y, self.xi_xy, self.xi_yy, self.xi_xyy, self.xi_yyy,
                self.xi_xx, self.xi_xxx, self.xi_xxy)


def utilization_from_b(b: float) -> float:
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b!r}")
    # (b + 4 - sqrt(b^2 + 8b)) / 4, rationalised to avoid cancellation at large b
    return 4.0 / (b + 4.0 + math.sqrt(b * b + 8.0 * b))


def equilibrium(params: FluidParams) -> Equilibrium:
    if params.with_queue:
        # b and sigma2 enter the balance only through their product
        rho = utilization_from_b(params.b * params.sigma2)
    else:
        rho = params.gamma
    return Equilibrium(R_star=params.C * rho, rho_star=rho)


def b_for_utilization(rho_star: float) -> float:
    """Queue gain b that places the equilibrium at utilization ``rho_star``."""
    if not 0 < rho_star < 1:
        raise ValueError(f"rho_star must lie in (0, 1), got {rho_star!r}")
    return 2.0 * (1.0 - rho_star) ** 2 / rho_star


def mean_queue(y: float, C: float, sigma2: float = 1.0) -> float:
    if y < 0:
        raise ValueError(f"arrival rate must be >= 0, got {y!r}")
    if y >= C:
        raise ValueError(f"arrival rate {y!r} reaches capacity {C!r} (queue pole)")
    return y * sigma2 / (2 * (C - y))


def rhs(params: FluidParams, R_now: float, R_delayed: float) -> float:
    """dR/dt given the current rate and the rate one delay ago."""
    if params.with_queue:
        C = params.C
        if R_delayed >= C:
            raise ValueError(f"delayed rate {R_delayed!r} >= C={C!r}: queue pole crossed")
        gain = params.kappa * params.a * R_now / (C * params.tau)
        return gain * (C - R_delayed - params.b * C * mean_queue(R_delayed, C, params.sigma2))
    target = params.gamma * params.C
    gain = params.kappa * params.a * R_now / (target * params.tau)
    return gain * (target - R_delayed)


def taylor_coeffs(params: FluidParams) -> TaylorCoeffs:
    a, C, tau = params.a, params.C, params.tau
    if not params.with_queue:
        return TaylorCoeffs(xi_y=-a / tau, xi_xy=-a / (params.gamma * C * tau))
    rho = equilibrium(params).rho_star
    if rho >= 1.0:
        raise ValueError("expansion undefined at rho* = 1 (b = 0)")
    return TaylorCoeffs(
        xi_y=-a * (1 + rho) / tau,
        xi_xy=-a * (1 + rho) / (C * tau * rho),
        xi_yy=-a / (C * tau * (1 - rho)),
        xi_xyy=-a / (C * C * tau * rho * (1 - rho)),
        xi_yyy=-a / (C * C * tau * (1 - rho) ** 2),
    )
