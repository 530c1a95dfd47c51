"""Fixed-step RK4 integration of the fluid model and bifurcation sweeps.

The grid step divides the delay exactly, so the delayed argument at the
start and end of a step is a stored sample.  The RK4 mid-stage needs the
delayed value half a step off-grid; it comes from the cubic Hermite
interpolant built from the stored samples and their derivatives.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .fluid_model import FluidParams, equilibrium

MIN_STEPS_PER_DELAY = 100
DEFAULT_STEPS_PER_DELAY = 1000


class Direction(str, enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


@dataclass
class Trajectory:
    t: np.ndarray
    R: np.ndarray
    dR: np.ndarray
    dt: float
    params: FluidParams
    diverged: bool = False
    divergence_time: float | None = None

    @property
    def steps_per_delay(self) -> int:
        return int(round(self.params.tau / self.dt))

    def final_history(self) -> tuple[np.ndarray, np.ndarray]:
        """Samples and slopes of the last delay window, for a warm start."""
        m = self.steps_per_delay + 1
        return self.R[-m:].copy(), self.dR[-m:].copy()


@dataclass
class SweepPoint:
    kappa: float
    amplitude: float
    converged_to_equilibrium: bool
    diverged: bool


@dataclass
class SweepComparison:
    """Forward/backward sweep pair reduced to a criticality signature."""

    hysteresis_kappas: list[float]
    diverged_kappas: list[float]
    oscillating_kappas: list[float]
    verdict: str  # "supercritical", "subcritical" or "none"


def _vector_field(params: FluidParams):
    """Scalar f(R_now, R_delayed) with constants folded in.

    Returns None for the queue-pole crossing instead of raising; the
    integrator treats that as divergence.
    """
    C, tau = params.C, params.tau
    if params.with_queue:
        k = params.kappa * params.a / (C * tau)
        half_bs = 0.5 * params.b * params.sigma2 * C

        def f(x, y):
            if y >= C:
                return None
            return k * x * (C - y - half_bs * y / (C - y))
    else:
        target = params.gamma * C
        k = params.kappa * params.a / (target * tau)

        def f(x, y):
            return k * x * (target - y)
    return f


def _grid(tau: float, dt: float) -> tuple[int, float]:
    n = max(MIN_STEPS_PER_DELAY, int(round(tau / dt)))
    return n, tau / n


def integrate(params: FluidParams, R0, t_end: float, dt: float | None = None,
              history_slope=None) -> Trajectory:
    """Integrate from a history on [-tau, 0] up to ``t_end``.

    ``R0`` is either a positive constant or an array of N + 1 samples
    covering [-tau, 0] on the integration grid (``history_slope`` then gives
    the matching derivatives; estimated by finite differences if omitted).
    With an array history the grid is fixed by its length; otherwise ``dt``
    is snapped so that tau/dt is an integer of at least 100.
    """
    tau, C = params.tau, params.C
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end!r}")
    if np.ndim(R0) == 0:
        if dt is None:
            dt = tau / DEFAULT_STEPS_PER_DELAY
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        n, dt = _grid(tau, dt)
        history = np.full(n + 1, float(R0))
        slope = np.zeros(n + 1)
    else:
        history = np.asarray(R0, dtype=float)
        n = history.size - 1
        if n < MIN_STEPS_PER_DELAY:
            raise ValueError(f"history needs at least {MIN_STEPS_PER_DELAY + 1} samples")
        dt = tau / n
        if history_slope is None:
            slope = np.gradient(history, dt)
        else:
            slope = np.asarray(history_slope, dtype=float)
            if slope.shape != history.shape:
                raise ValueError("history_slope must match the history samples")
    if not np.all(np.isfinite(history)) or not np.all(history > 0):
        raise ValueError("history must be finite and strictly positive")
    if params.with_queue and np.any(history >= C):
        raise ValueError("with queue feedback the history must stay below C")

    f = _vector_field(params)
    steps = int(math.ceil(t_end / dt - 1e-9))
    size = n + steps + 1
    R = history.tolist() + [0.0] * steps
    D = slope.tolist() + [0.0] * steps  # D[n] is the slope arriving at t = 0
    lo, hi = 1e-9 * C, 1e3 * C
    h, h2, h6 = dt, 0.5 * dt, dt / 6.0

    right0 = f(R[n], R[0])  # slope leaving t = 0
    diverged = right0 is None
    last = n
    k1 = right0
    for k in range(n, size - 1):
        if diverged:
            break
        j = k - n
        x = R[k]
        yj, yj1 = R[j], R[j + 1]
        dj = right0 if j == n else D[j]
        ymid = 0.5 * (yj + yj1) + 0.125 * h * (dj - D[j + 1])
        k2 = f(x + h2 * k1, ymid)
        if k2 is None:
            diverged = True
            break
        k3 = f(x + h2 * k2, ymid)
        k4 = f(x + h * k3, yj1) if k3 is not None else None
        if k4 is None:
            diverged = True
            break
        xn = x + h6 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not lo < xn < hi:
            diverged = True
            break
        k1 = f(xn, yj1)
        if k1 is None:
            diverged = True
            break
        R[k + 1] = xn
        D[k + 1] = k1
        last = k + 1

    D[n] = right0 if right0 is not None else 0.0
    R_arr = np.asarray(R[n:last + 1])
    dR_arr = np.asarray(D[n:last + 1])
    t_arr = dt * np.arange(R_arr.size)
    return Trajectory(t=t_arr, R=R_arr, dR=dR_arr, dt=dt, params=params,
                      diverged=diverged,
                      divergence_time=dt * (last - n + 1) if diverged else None)


def tail_amplitude(traj: Trajectory, tail_fraction: float = 0.25) -> float:
    """Half the peak-to-trough excursion of R over the trailing window."""
    if traj.diverged:
        raise ValueError("trajectory diverged; amplitude undefined")
    if not 0 < tail_fraction <= 1:
        raise ValueError(f"tail_fraction must lie in (0, 1], got {tail_fraction!r}")
    m = int(round(tail_fraction * (traj.R.size - 1)))
    if m * traj.dt < 10 * traj.params.tau - 1e-9 * traj.params.tau:
        raise ValueError("tail window must span at least 10 delays")
    tail = traj.R[-(m + 1):]
    return 0.5 * float(tail.max() - tail.min())


def sweep_bifurcation(params: FluidParams, kappa_grid, direction=Direction.FORWARD, *,
                      t_end: float | None = None, dt: float | None = None,
                      tail_fraction: float = 0.25, amplitude_tolerance: float | None = None,
                      start=None) -> list[SweepPoint]:
    """Warm-started sweep of the bifurcation parameter.

    Forward sweeps walk the grid in ascending order starting from a 1% step
    above equilibrium.  Backward sweeps walk it in descending order starting
    from ``start`` (a constant or a warm-start history); without one they
    start from the largest kappa with a 10% perturbation, which lands on the
    oscillating branch when one exists.  A diverged point restarts the next
    run from the initial perturbation.
    """
    direction = Direction(direction)
    grid = sorted(float(k) for k in kappa_grid)
    if not grid:
        raise ValueError("empty kappa grid")
    if direction is Direction.BACKWARD:
        grid = grid[::-1]
    tau = params.tau
    t_end = 500.0 * tau if t_end is None else t_end
    R_star = equilibrium(params).R_star
    if amplitude_tolerance is None:
        amplitude_tolerance = 1e-3 * R_star
    if start is None:
        bump = 0.01 if direction is Direction.FORWARD else 0.1
        start = R_star * (1.0 + bump)
    if params.with_queue and np.ndim(start) == 0:
        start = min(start, 0.5 * (R_star + params.C))

    points = []
    history, slope = start, None
    for kappa in grid:
        traj = integrate(params.replace(kappa=kappa), history, t_end, dt=dt, history_slope=slope)
        if traj.diverged:
            points.append(SweepPoint(kappa, math.nan, False, True))
            history, slope = start, None
            continue
        amp = tail_amplitude(traj, tail_fraction)
        tail_mean = float(traj.R[-traj.steps_per_delay:].mean())
        settled = amp <= amplitude_tolerance and abs(tail_mean - R_star) <= amplitude_tolerance
        points.append(SweepPoint(kappa, amp, settled, False))
        if settled and np.ndim(start) == 0:
            # a settled equilibrium carries no branch information; keep the seed
            history, slope = start, None
        else:
            history, slope = traj.final_history()
    return points


def decay_rate_estimate(traj: Trajectory, floor: float = 1e-11) -> float:
    """Decay rate of R toward R* read off a trajectory.

    Fits a second-order linear recurrence x[k+2] = c1 x[k+1] + c2 x[k] to the
    deviation R - R*, sampled every quarter delay from t = 2 tau on, and
    returns minus the largest real part among its two modes.  Two modes are
    enough to represent a real pair, a complex pair or the repeated root at
    gain 1/e, where a straight log-envelope fit is biased.  Samples below
    ``floor * R*`` are rounding noise and are dropped.
    """
    from .linear_analysis import HALF_PI, loop_gain

    params = traj.params
    if params.kappa * loop_gain(params) >= HALF_PI:
        raise ValueError("equilibrium is not locally stable; no decay rate")
    if traj.diverged:
        raise ValueError("trajectory diverged")
    R_star = equilibrium(params).R_star
    n = traj.steps_per_delay
    dev = traj.R[2 * n:] - R_star
    above = np.flatnonzero(np.abs(dev) > floor * R_star)
    if above.size == 0:
        raise ValueError("deviation is already below the noise floor")
    stride = max(1, n // 4)
    x = dev[: above[-1] + 1: stride]
    if x.size < 8:
        raise ValueError("too few samples above the noise floor; lengthen the run")
    lhs = np.column_stack([x[1:-1], x[:-2]])
    (c1, c2), *_ = np.linalg.lstsq(lhs, x[2:], rcond=None)
    modes = np.roots([1.0, -c1, -c2]).astype(complex)
    if np.any(modes == 0):
        raise ValueError("degenerate recurrence fit")
    rates = np.log(modes).real / (stride * traj.dt)
    return float(-rates.max())


def is_growing(traj: Trajectory, window_delays: float = 20.0) -> bool:
    """True when the oscillation about R* is larger at the end than early on.

    Compares the peak-to-trough swing over two windows of ``window_delays``
    delays: one starting after the first 20 delays and the trailing one.
    Diverged trajectories count as growing.
    """
    if traj.diverged:
        return True
    n = traj.steps_per_delay
    w = int(round(window_delays * n))
    if traj.R.size < 3 * w + 20 * n:
        raise ValueError("trajectory too short to compare windows")
    early = traj.R[20 * n: 20 * n + w]
    late = traj.R[-w:]
    return float(np.ptp(late)) > float(np.ptp(early))


def oscillation_onset(params: FluidParams, kappa_grid, *, t_end: float | None = None,
                      dt: float | None = None, perturbation: float = 1e-3):
    """Bracket the onset of sustained oscillation on a kappa grid.

    Each grid point starts from R*(1 + perturbation).  Returns the largest
    kappa whose perturbation decays and the smallest whose perturbation
    grows (None where no such grid point exists).
    """
    t_end = 300.0 * params.tau if t_end is None else t_end
    R0 = equilibrium(params).R_star * (1.0 + perturbation)
    stable_max, unstable_min = None, None
    for kappa in sorted(float(k) for k in kappa_grid):
        traj = integrate(params.replace(kappa=kappa), R0, t_end, dt=dt)
        if is_growing(traj):
            if unstable_min is None:
                unstable_min = kappa
        elif unstable_min is None:
            stable_max = kappa
    return stable_max, unstable_min


def compare_sweeps(forward: list[SweepPoint], backward: list[SweepPoint],
                   tolerance: float) -> SweepComparison:
    """Detect hysteresis between a forward and a backward sweep.

    Hysteresis is any kappa where both runs stayed bounded and their
    amplitudes differ by more than ``tolerance``.  It, or a divergent point,
    marks the bifurcation subcritical; oscillation without either marks it
    supercritical.
    """
    back = {p.kappa: p for p in backward}
    hysteresis, diverged, oscillating = [], set(), set()
    for p in forward + backward:
        if p.diverged:
            diverged.add(p.kappa)
        elif p.amplitude > tolerance:
            oscillating.add(p.kappa)
    for p in forward:
        q = back.get(p.kappa)
        if q is None or p.diverged or q.diverged:
            continue
        if abs(p.amplitude - q.amplitude) > tolerance:
            hysteresis.append(p.kappa)
    if hysteresis or diverged:
        verdict = "subcritical"
    elif oscillating:
        verdict = "supercritical"
    else:
        verdict = "none"
    return SweepComparison(sorted(hysteresis), sorted(diverged), sorted(oscillating), verdict)
