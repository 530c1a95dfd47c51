"""Command-line front end: analysis report plus figure-ready CSV/JSON."""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from . import dde_sim, hopf, linear_analysis, packet_sim
from .fluid_model import FluidParams, Variant, b_for_utilization, equilibrium

SCHEMA = 1


# --- serialization -------------------------------------------------------

def _fmt(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        return "null"
    text = format(x, ".17g")
    # keep floats recognisable as floats
    return text if any(c in text for c in ".en") else text + ".0"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with 17-significant-digit floats and insertion-ordered keys."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv(header: list[str], rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_cell(v) for v in row) + "\n")
    return buf.getvalue()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return _fmt(float(v)) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    return str(v)


def _provenance(args, seed=None) -> dict:
    out = {"tool": "rcpfeedback", "version": __version__, "seed": seed}
    if getattr(args, "timestamp", False):
        out["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return out


# --- argument types ------------------------------------------------------

def _positive(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be positive and finite, got {text}")
    return v


def _nonnegative(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"must be >= 0 and finite, got {text}")
    return v


def _unit_open(text: str) -> float:
    v = _positive(text)
    if not v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {text}")
    return v


def _unit_half_open(text: str) -> float:
    v = _positive(text)
    if not v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1], got {text}")
    return v


def _count(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return v


class UsageError(Exception):
    """Bad flag combination; the message names the flag."""


def _add_fluid_flags(p: argparse.ArgumentParser, kappa: bool = True) -> None:
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.WITH_QUEUE.value)
    p.add_argument("--a", type=_positive, required=True, help="rate-mismatch gain")
    p.add_argument("--C", type=_positive, required=True, help="link capacity")
    p.add_argument("--tau", type=_positive, required=True, help="round-trip delay")
    p.add_argument("--b", type=_nonnegative, help="queue gain (with-queue)")
    p.add_argument("--rho-star", type=_unit_open, help="target utilization; sets b (with-queue)")
    p.add_argument("--gamma", type=_unit_half_open, default=None, help="target utilization (without-queue)")
    p.add_argument("--sigma2", type=_positive, default=1.0, help="packet-size variability")
    if kappa:
        p.add_argument("--kappa", type=_positive, default=1.0, help="bifurcation parameter")


def _fluid_params(args, kappa: float | None = None) -> FluidParams:
    variant = Variant(args.variant)
    if variant is Variant.WITH_QUEUE:
        if args.b is not None and args.rho_star is not None:
            raise UsageError("--b and --rho-star are mutually exclusive")
        if args.gamma is not None:
            raise UsageError("--gamma applies to --variant without-queue only")
        if args.rho_star is not None:
            b = b_for_utilization(args.rho_star)
        elif args.b is not None:
            b = args.b
        else:
            raise UsageError("--b or --rho-star is required with --variant with-queue")
        if b == 0:
            raise UsageError("--b must be positive (b = 0 puts the equilibrium on the queue pole)")
        gamma = 1.0
    else:
        for flag, value in (("--b", args.b), ("--rho-star", args.rho_star)):
            if value is not None:
                raise UsageError(f"{flag} applies to --variant with-queue only")
        b = 0.0
        gamma = 1.0 if args.gamma is None else args.gamma
    k = getattr(args, "kappa", 1.0) if kappa is None else kappa
    return FluidParams(a=args.a, C=args.C, tau=args.tau, b=b, kappa=k, gamma=gamma,
                       sigma2=args.sigma2, variant=variant)


def _inputs(params: FluidParams) -> dict:
    return {"variant": params.variant.value, "a": params.a, "C": params.C, "tau": params.tau,
            "b": params.b, "gamma": params.gamma, "kappa": params.kappa, "sigma2": params.sigma2}


def _grid(lo: float, hi: float, points: int, flag: str) -> np.ndarray:
    if not hi > lo:
        raise UsageError(f"{flag}: max must exceed min")
    return np.linspace(lo, hi, points)


# --- commands ------------------------------------------------------------

def cmd_analyze(args) -> dict[str, str]:
    params = _fluid_params(args)
    eq = equilibrium(params)
    verdict = linear_analysis.stability(params)
    conv = linear_analysis.convergence_rate(verdict.effective_gain, params.tau)
    report = hopf.hopf_report(params)
    if not math.isclose(report.kappa_c, verdict.kappa_c, rel_tol=1e-12):
        raise RuntimeError("inconsistent critical gain between modules")
    out = {
        "schema": SCHEMA,
        "inputs": _inputs(params),
        "equilibrium": {"R_star": eq.R_star, "rho_star": eq.rho_star},
        "stability": {"stable": verdict.stable, "margin": verdict.margin,
                      "kappa_c": verdict.kappa_c, "effective_gain": verdict.effective_gain},
        "convergence": {"sigma": conv.sigma, "branch": conv.branch.value,
                        "sigma_candidates": list(conv.sigma_candidates)},
        "robust_stability": linear_analysis.robust_stability(params),
        "hopf": {"kappa_c": report.kappa_c, "mu2": report.mu2,
                 "criticality": report.criticality.value,
                 "amplitude_coefficient": report.amplitude_coefficient,
                 "mu2_closed_form": report.mu2_closed_form,
                 "numerator": report.numerator},
        "provenance": _provenance(args),
    }
    return {"analysis.json": dumps(out) + "\n"}


def cmd_stability_chart(args) -> dict[str, str]:
    grid = _grid(args.a_min, args.a_max, args.points, "--a-min/--a-max")
    rows = linear_analysis.stability_boundary(grid)
    return {"fig2_boundary.csv": _csv(["a", "b"], rows)}


def cmd_convergence(args) -> dict[str, str]:
    tau = args.tau
    rows = []
    if args.axis == "a":
        grid = _grid(args.min, args.max, args.points, "--min/--max")
        if args.variant == Variant.WITH_QUEUE.value:
            if args.b is None:
                raise UsageError("--b is required for --axis a with --variant with-queue")
            rho = equilibrium(FluidParams(a=1.0, C=1.0, tau=tau, b=args.b)).rho_star
            factor = 1.0 + rho
        else:
            factor = 1.0
        for a in grid:
            rep = linear_analysis.convergence_rate(a * factor, tau)
            rows.append((a, args.b, a * factor, rep.sigma, rep.branch.value))
        name = "fig3_sigma.csv"
    else:
        if args.variant != Variant.WITH_QUEUE.value:
            raise UsageError("--axis b needs --variant with-queue")
        if args.a is None:
            raise UsageError("--a is required for --axis b")
        grid = _grid(args.min, args.max, args.points, "--min/--max")
        for b in grid:
            gain = linear_analysis.loop_gain(FluidParams(a=args.a, C=1.0, tau=tau, b=float(b)))
            rep = linear_analysis.convergence_rate(gain, tau)
            rows.append((args.a, b, gain, rep.sigma, rep.branch.value))
        name = "fig4_sigma_b.csv"
    return {name: _csv(["a", "b", "effective_gain", "sigma", "branch"], rows)}


def cmd_hopf_surface(args) -> dict[str, str]:
    n = args.points
    if args.which == "utilization":
        rho = _grid(args.min if args.min is not None else 0.01,
                    args.max if args.max is not None else 0.99, n, "--min/--max")
        rows = [(r, hopf.mu2_numerator(r), hopf.mu2_closed_form(r, args.C)) for r in rho]
        return {"fig5_mu2_utilization.csv": _csv(["rho_star", "numerator", "mu2"], rows)}
    lo = -1.0 if args.min is None else args.min
    hi = 1.0 if args.max is None else args.max
    axis = _grid(lo, hi, n, "--min/--max")
    xi_y = -abs(args.xi_y)
    rows = []
    if args.which == "quadratics":
        for u in axis:
            for v in axis:
                rows.append((u, v, hopf.mu2_quadratics_only(u, v, xi_y)))
        return {"mu2_quadratics.csv": _csv(["xi_xy", "xi_yy", "mu2"], rows)}
    for u in axis:
        for v in axis:
            rows.append((u, v, hopf.mu2_cubics_only(u, v, xi_y)))
    return {"mu2_cubics.csv": _csv(["xi_xyy", "xi_yyy", "mu2"], rows)}


def cmd_simulate_fluid(args) -> dict[str, str]:
    params = _fluid_params(args)
    R0 = args.R0 if args.R0 is not None else 1.01 * equilibrium(params).R_star
    traj = dde_sim.integrate(params, R0, args.t_end, dt=args.dt)
    every = args.every
    rows = zip(traj.t[::every], traj.R[::every])
    summary = {"schema": SCHEMA, "inputs": _inputs(params), "R0": R0, "t_end": args.t_end,
               "dt": traj.dt, "diverged": traj.diverged, "divergence_time": traj.divergence_time,
               "provenance": _provenance(args)}
    return {"fluid_trajectory.csv": _csv(["t", "R"], rows),
            "fluid_summary.json": dumps(summary) + "\n"}


def cmd_sweep(args) -> dict[str, str]:
    params = _fluid_params(args, kappa=1.0)
    if not args.kappa_max > args.kappa_min:
        raise UsageError("--kappa-max must exceed --kappa-min")
    count = int(math.floor((args.kappa_max - args.kappa_min) / args.kappa_step + 1e-9)) + 1
    grid = [round(args.kappa_min + i * args.kappa_step, 12) for i in range(count)]
    t_end = args.t_end_delays * params.tau
    R_star = equilibrium(params).R_star
    tol = args.tolerance * R_star
    directions = ["forward", "backward"] if args.direction == "both" else [args.direction]
    results = {d: dde_sim.sweep_bifurcation(params, grid, d, t_end=t_end, dt=args.dt,
                                            amplitude_tolerance=tol)
               for d in directions}
    rows = [(p.kappa, d, None if p.diverged else p.amplitude, p.converged_to_equilibrium, p.diverged)
            for d in directions for p in results[d]]
    files = {"sweep.csv": _csv(["kappa", "direction", "amplitude", "converged", "diverged"], rows)}
    summary = {"schema": SCHEMA, "inputs": _inputs(params), "grid": grid,
               "t_end": t_end, "tolerance": tol}
    if args.direction == "both":
        cmp = dde_sim.compare_sweeps(results["forward"], results["backward"], tol)
        summary.update({"hysteresis": bool(cmp.hysteresis_kappas),
                        "hysteresis_kappas": cmp.hysteresis_kappas,
                        "diverged_kappas": cmp.diverged_kappas,
                        "verdict": cmp.verdict})
    summary["provenance"] = _provenance(args)
    files["sweep_summary.json"] = dumps(summary) + "\n"
    return files


_PACKET_FLAGS = {
    "capacity": float, "n_sources": int, "rtt": float, "a": float, "b": float, "gamma": float,
    "packet_size": float, "control_interval": float, "duration": float, "seed": int,
    "variant": str, "buffer_limit": int, "queue_term": str,
}


def cmd_simulate_packets(args) -> dict[str, str]:
    values = packet_sim.read_config_file(args.config) if args.config else {}
    for key in _PACKET_FLAGS:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    if args.capacity_mbps is not None:
        if args.capacity is not None:
            raise UsageError("--capacity and --capacity-mbps are mutually exclusive")
        values["capacity"] = args.capacity_mbps * packet_sim.MBPS
    try:
        cfg = packet_sim.PacketSimConfig.from_mapping(values)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"packet config: {exc}")
    trace = packet_sim.run(cfg)
    metrics = packet_sim.oscillation_metrics(trace, args.tail_fraction)
    summary = {
        "schema": SCHEMA,
        "config": cfg.to_dict(),
        "counters": trace.counters,
        "metrics": {"rate_amplitude": metrics.rate_amplitude,
                    "queue_amplitude": metrics.queue_amplitude,
                    "mean_utilization": metrics.mean_utilization,
                    "mean_rate": metrics.mean_rate,
                    "mean_queue": metrics.mean_queue,
                    "relative_rate_amplitude": metrics.relative_rate_amplitude},
        "provenance": _provenance(args, seed=cfg.seed),
    }
    return {
        "packets_trace.csv": _csv(["t_ms", "queue_pkts", "rate_Bpms"],
                                  zip(trace.t_ms, trace.queue_pkts.astype(int), trace.rate_Bpms)),
        "packets_aggregate.csv": _csv(["t_ms", "arrival_Bpms"], zip(trace.t_ms, trace.arrival_Bpms)),
        "packets_summary.json": dumps(summary) + "\n",
    }


# --- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcpfeedback", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", metavar="DIR", help="write every output file into DIR")
        p.add_argument("--timestamp", action="store_true", help="add a generation time to JSON provenance")

    p = sub.add_parser("analyze", help="stability, convergence and Hopf report")
    _add_fluid_flags(p)
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("stability-chart", help="Hopf boundary b(a) of the queue-feedback variant")
    p.add_argument("--a-min", type=_positive, default=math.pi / 4 + 1e-3)
    p.add_argument("--a-max", type=_positive, default=math.pi / 2 - 1e-3)
    p.add_argument("--points", type=_count, default=200)
    common(p)
    p.set_defaults(func=cmd_stability_chart)

    p = sub.add_parser("convergence", help="decay rate sigma against a or b")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.WITHOUT_QUEUE.value)
    p.add_argument("--axis", choices=["a", "b"], default="a")
    p.add_argument("--min", type=_positive, default=0.01)
    p.add_argument("--max", type=_positive, default=math.pi / 2 - 0.01)
    p.add_argument("--points", type=_count, default=200)
    p.add_argument("--tau", type=_positive, default=1.0)
    p.add_argument("--a", type=_positive, help="fixed a when sweeping b")
    p.add_argument("--b", type=_nonnegative, help="fixed b when sweeping a (with-queue)")
    common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("hopf-surface", help="mu2 over coefficient planes or utilization")
    p.add_argument("which", choices=["quadratics", "cubics", "utilization"])
    p.add_argument("--points", type=_count, default=41)
    p.add_argument("--min", type=float)
    p.add_argument("--max", type=float)
    p.add_argument("--xi-y", type=float, default=-1.0, help="linear coefficient (sign is forced negative)")
    p.add_argument("--C", type=_positive, default=1.0, help="capacity for the utilization curve")
    common(p)
    p.set_defaults(func=cmd_hopf_surface)

    p = sub.add_parser("simulate-fluid", help="DDE trajectory")
    _add_fluid_flags(p)
    p.add_argument("--R0", type=_positive, help="constant initial history (default 1.01 R*)")
    p.add_argument("--t-end", type=_positive, required=True)
    p.add_argument("--dt", type=_positive)
    p.add_argument("--every", type=_count, default=1, help="keep every k-th sample")
    common(p)
    p.set_defaults(func=cmd_simulate_fluid)

    p = sub.add_parser("sweep", help="warm-started bifurcation sweep in kappa")
    _add_fluid_flags(p, kappa=False)
    p.add_argument("--kappa-min", type=_positive, default=0.95)
    p.add_argument("--kappa-max", type=_positive, default=1.05)
    p.add_argument("--kappa-step", type=_positive, default=0.01)
    p.add_argument("--direction", choices=["forward", "backward", "both"], default="both")
    p.add_argument("--t-end-delays", type=_positive, default=500.0, help="run length per point in delays")
    p.add_argument("--dt", type=_positive)
    p.add_argument("--tolerance", type=_positive, default=0.05, help="hysteresis tolerance as a fraction of R*")
    common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate-packets", help="packet-level simulation")
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--capacity", type=_positive, help="bytes/ms (1 Gbps = 125000)")
    p.add_argument("--capacity-mbps", type=_positive)
    p.add_argument("--n-sources", type=_count)
    p.add_argument("--rtt", type=_positive, help="ms")
    p.add_argument("--a", type=_positive)
    p.add_argument("--b", type=_nonnegative)
    p.add_argument("--gamma", type=_unit_half_open)
    p.add_argument("--packet-size", type=_positive, help="bytes")
    p.add_argument("--control-interval", type=_positive, help="ms (default rtt/100)")
    p.add_argument("--duration", type=_positive, help="ms")
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", choices=[v.value for v in Variant])
    p.add_argument("--buffer-limit", type=_count, help="packets")
    p.add_argument("--queue-term", choices=list(packet_sim.QUEUE_TERMS))
    p.add_argument("--tail-fraction", type=_unit_half_open, default=0.5)
    common(p)
    p.set_defaults(func=cmd_simulate_packets)
    return parser


def _emit(files: dict[str, str], out_dir: str | None) -> None:
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        for name, text in files.items():
            with open(os.path.join(out_dir, name), "w") as fh:
                fh.write(text)
        return
    # stdout gets the primary output; JSON side files go to stderr
    names = list(files)
    sys.stdout.write(files[names[0]])
    for name in names[1:]:
        if name.endswith(".json"):
            sys.stderr.write(files[name])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        files = args.func(args)
    except UsageError as exc:
        parser.exit(2, f"{parser.prog} {args.command}: error: {exc}\n")
    except (ValueError, ArithmeticError, OSError) as exc:
        parser.exit(1, f"{parser.prog} {args.command}: error: {exc}\n")
    _emit(files, args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
