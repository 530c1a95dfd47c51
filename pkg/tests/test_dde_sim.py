import math

import numpy as np
import pytest

from rcpfeedback.dde_sim import (
    SweepPoint, compare_sweeps, decay_rate_estimate, integrate, is_growing, oscillation_onset,
    sweep_bifurcation, tail_amplitude,
)
from rcpfeedback.fluid_model import FluidParams, equilibrium
from rcpfeedback.linear_analysis import A_STAR, convergence_rate, stability

EX1 = FluidParams(a=1.01, C=10.0, tau=100.0, b=0.736)
EX3 = FluidParams(a=0.827, C=10.0, tau=100.0, b=0.022)


def _order_ratios(params, R0):
    ref = integrate(params, R0, 6.0, dt=1 / 6400).R[-1]
    errs = [abs(integrate(params, R0, 6.0, dt=1 / n).R[-1] - ref) for n in (100, 200, 400)]
    return errs[0] / errs[1], errs[1] / errs[2]


def test_rk4_order_without_queue():
    p = FluidParams(a=1.2, C=10.0, tau=1.0, variant="without-queue")
    assert min(_order_ratios(p, 8.0)) >= 8.0


def test_rk4_order_with_queue():
    p = FluidParams(a=1.01, C=10.0, tau=1.0, b=0.736)
    assert min(_order_ratios(p, 5.0)) >= 8.0


def test_equilibrium_is_fixed():
    R = equilibrium(EX1).R_star
    traj = integrate(EX1, R, 50 * EX1.tau, dt=1.0)
    assert np.max(np.abs(traj.R - R)) < 1e-12 * R


def test_grid_snaps_to_delay():
    traj = integrate(EX1, 5.6, 500.0, dt=0.7)
    assert traj.steps_per_delay * traj.dt == pytest.approx(EX1.tau, rel=1e-15)
    with pytest.raises(ValueError):
        integrate(EX1, 5.6, 500.0, dt=0.0)


def test_example1_converges_below_kappa_c():
    traj = integrate(EX1.replace(kappa=0.95), 5.6, 200 * EX1.tau, dt=1.0)
    assert not traj.diverged
    assert traj.R[-1] == pytest.approx(equilibrium(EX1).R_star, rel=1e-3)


def test_example3_diverges_above_kappa_c():
    assert integrate(EX3.replace(kappa=1.05), 8.9, 100 * EX3.tau, dt=1.0).diverged
    stable = integrate(EX3.replace(kappa=0.95), 8.9, 100 * EX3.tau, dt=1.0)
    assert not stable.diverged
    assert stable.R[-1] == pytest.approx(equilibrium(EX3).R_star, rel=1e-2)


def test_warm_start_continues_exactly():
    p = EX1.replace(kappa=1.03)
    whole = integrate(p, 5.6, 40 * p.tau, dt=1.0)
    first = integrate(p, 5.6, 20 * p.tau, dt=1.0)
    hist, slope = first.final_history()
    second = integrate(p, hist, 20 * p.tau, history_slope=slope)
    np.testing.assert_array_equal(second.R, whole.R[-second.R.size:])


def test_history_validation():
    with pytest.raises(ValueError):
        integrate(EX1, np.full(50, 5.0), 10.0)
    with pytest.raises(ValueError):
        integrate(EX1, 10.5, 10.0)
    with pytest.raises(ValueError):
        integrate(EX1, -1.0, 10.0)


def test_deterministic():
    a = integrate(EX1.replace(kappa=1.05), 5.6, 30 * EX1.tau, dt=1.0)
    b = integrate(EX1.replace(kappa=1.05), 5.6, 30 * EX1.tau, dt=1.0)
    np.testing.assert_array_equal(a.R, b.R)


@pytest.mark.parametrize("gain", [0.2, A_STAR, 0.6, 1.0, 1.4])
def test_decay_rate_matches_linear_theory(gain):
    p = FluidParams(a=gain, C=10.0, tau=1.0, variant="without-queue")
    R = equilibrium(p).R_star
    traj = integrate(p, R * (1 + 1e-6), 60.0, dt=0.01)
    expected = convergence_rate(gain, 1.0).sigma
    assert decay_rate_estimate(traj) == pytest.approx(expected, rel=0.05)


def test_decay_rate_refuses_unstable():
    p = FluidParams(a=1.6, C=10.0, tau=1.0, variant="without-queue")
    with pytest.raises(ValueError):
        decay_rate_estimate(integrate(p, 9.0, 30.0, dt=0.01))


def test_tail_amplitude_requires_long_window():
    traj = integrate(EX1, 5.6, 20 * EX1.tau, dt=1.0)
    with pytest.raises(ValueError):
        tail_amplitude(traj, 0.25)
    assert tail_amplitude(traj, 1.0) >= 0.0


def test_tail_amplitude_of_divergent_run():
    traj = integrate(EX3.replace(kappa=1.05), 8.9, 100 * EX3.tau, dt=1.0)
    with pytest.raises(ValueError):
        tail_amplitude(traj)
    assert is_growing(traj)


def test_onset_brackets_without_queue():
    p = FluidParams(a=1.0, C=10.0, tau=1.0, gamma=0.95, variant="without-queue")
    kc = stability(p).kappa_c
    lo, hi = oscillation_onset(p, [kc * 0.99, kc * 0.997, kc * 1.003, kc * 1.01], dt=0.02)
    assert lo == pytest.approx(kc * 0.997) and hi == pytest.approx(kc * 1.003)


def test_sweep_directions_and_restarts():
    p = EX3
    pts = sweep_bifurcation(p, [0.95, 1.05], "forward", t_end=200 * p.tau, dt=1.0)
    assert [q.kappa for q in pts] == [0.95, 1.05]
    assert not pts[0].diverged and pts[1].diverged
    back = sweep_bifurcation(p, [0.95, 1.05], "backward", t_end=200 * p.tau, dt=1.0)
    assert [q.kappa for q in back] == [1.05, 0.95]
    with pytest.raises(ValueError):
        sweep_bifurcation(p, [], "forward")


def test_compare_sweeps_verdicts():
    fwd = [SweepPoint(1.0, 0.0, True, False), SweepPoint(1.1, 1.0, False, False)]
    assert compare_sweeps(fwd, list(fwd), 0.1).verdict == "supercritical"
    back = [SweepPoint(1.0, 0.8, False, False), SweepPoint(1.1, 1.0, False, False)]
    cmp = compare_sweeps(fwd, back, 0.1)
    assert cmp.verdict == "subcritical" and cmp.hysteresis_kappas == [1.0]
    quiet = [SweepPoint(1.0, 0.0, True, False)]
    assert compare_sweeps(quiet, quiet, 0.1).verdict == "none"
    boom = [SweepPoint(1.0, math.nan, False, True)]
    assert compare_sweeps(quiet, boom, 0.1).verdict == "subcritical"
