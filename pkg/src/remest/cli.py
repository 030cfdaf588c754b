"""Command-line front end.

Subcommands: ``stability``, ``region``, ``mse``, ``bounds``,
``channel-from-snr``.  Configuration arrives as a JSON file (see
``load_config`` for the schema); a handful of named fixture configs ship
with the package and can be referenced by name.  All outputs are
deterministic given the config and seeds: JSON uses 12 significant digits,
CSV uses 6, and nothing timestamped is ever emitted.

Exit codes: 0 success (and, for ``stability``, stable), 1 input error,
2 adverse verdict (unstable configuration, failed agreement or failed
bound checks, all-saturated simulation).
"""

from __future__ import annotations

import argparse
import json
import math
import sys as _sys
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import bounds as bounds_mod
from .bounds import PreconditionError
from .channel import ChannelError, MarkovChannel, dropout_from_snr
from .cycles import (
    ScanAxis,
    analytic_mse,
    cycle_model,
    region_scan,
    stability_margin,
)
from .montecarlo import (
    CONVENTIONAL,
    SMART,
    SimulationConfig,
    ensemble,
    simulate_conventional,
    simulate_smart,
    trajectory_csv,
)
from .system import LtiSystem, riccati_steady_state, validate


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Deterministic serialization


def json_dumps(obj, sig=12) -> str:
    """Canonical JSON with floats at a fixed significant-digit count."""
    out = []
    _write_json(obj, out, sig)
    return "".join(out) + "\n"


def _write_json(obj, out, sig, indent=0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (k, v) in enumerate(obj.items()):
            out.append(f'{pad}  "{k}": ')
            _write_json(v, out, sig, indent + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if not obj:
            out.append("[]")
            return
        out.append("[")
        for i, v in enumerate(obj):
            _write_json(v, out, sig, indent + 1)
            if i < len(obj) - 1:
                out.append(", ")
        out.append("]")
    elif isinstance(obj, bool) or obj is None:
        out.append("true" if obj is True else "false" if obj is False else "null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            out.append("null")
        elif math.isinf(v):
            out.append('"unbounded"' if v > 0 else '"-unbounded"')
        else:
            out.append(f"{v:.{sig}g}")
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj)!r}")


# ---------------------------------------------------------------------------
# Config ingestion


@dataclass
class Experiment:
    system: LtiSystem
    channel: MarkovChannel
    simulation: SimulationConfig
    scan_axes: tuple | None
    scan_resolution: int | None
    tolerances: dict


def _expect(cond, path, message):
    if not cond:
        raise ConfigError(f"{path}: {message}")


def _matrix(node, path):
    _expect(isinstance(node, list) and node, path, "expected a non-empty array "
            "of rows")
    width = None
    for i, row in enumerate(node):
        _expect(isinstance(row, list) and row, f"{path}[{i}]",
                "expected a non-empty array of numbers")
        if width is None:
            width = len(row)
        _expect(len(row) == width, f"{path}[{i}]",
                f"row has {len(row)} entries, expected {width}")
        for j, v in enumerate(row):
            _expect(isinstance(v, (int, float)) and not isinstance(v, bool)
                    and math.isfinite(v), f"{path}[{i}][{j}]",
                    "expected a finite number")
    return np.asarray(node, dtype=float)


def _vector(node, path):
    _expect(isinstance(node, list) and node, path,
            "expected a non-empty array of numbers")
    for j, v in enumerate(node):
        _expect(isinstance(v, (int, float)) and not isinstance(v, bool)
                and math.isfinite(v), f"{path}[{j}]", "expected a finite number")
    return np.asarray(node, dtype=float)


def fixture_path(name: str):
    """Path of a bundled fixture config, or None."""
    base = name if name.endswith(".json") else name + ".json"
    ref = resources.files("remest").joinpath("fixtures").joinpath(base)
    return ref if ref.is_file() else None


def load_config(path: str) -> Experiment:
    """Parse and validate a JSON experiment config.

    Schema (all blocks except "system" and "channel" optional):

      system:     {A, C, W, V} as nested numeric arrays
      channel:    {transition: rows, dropout: [d1..dM]} or
                  {transition: rows, snr: {gains, blocklength, rate}}
      simulation: {horizon, seeds, mode, initial_state, record_trajectory}
      scan:       {axes: [{state, min, max} ...], resolution}
      tolerances: {spectral, series}

    ``state`` and ``initial_state`` are 1-based in the file.
    """
    import os

    actual = path
    if not os.path.exists(path):
        bundled = fixture_path(path)
        if bundled is None:
            raise ConfigError(f"config file not found: {path}")
        actual = bundled
    try:
        with open(actual, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    _expect(isinstance(raw, dict), "$", "top level must be an object")

    sys_node = raw.get("system")
    _expect(isinstance(sys_node, dict), "system", "missing or not an object")
    for key in ("A", "C", "W", "V"):
        _expect(key in sys_node, f"system.{key}", "missing")
    try:
        system = LtiSystem(
            A=_matrix(sys_node["A"], "system.A"),
            C=_matrix(sys_node["C"], "system.C"),
            W=_matrix(sys_node["W"], "system.W"),
            V=_matrix(sys_node["V"], "system.V"),
        )
    except ValueError as exc:
        raise ConfigError(f"system: {exc}") from exc

    ch_node = raw.get("channel")
    _expect(isinstance(ch_node, dict), "channel", "missing or not an object")
    _expect("transition" in ch_node, "channel.transition", "missing")
    p = _matrix(ch_node["transition"], "channel.transition")
    gains = None
    if "dropout" in ch_node:
        d = _vector(ch_node["dropout"], "channel.dropout")
    elif "snr" in ch_node:
        snr = ch_node["snr"]
        _expect(isinstance(snr, dict), "channel.snr", "expected an object")
        for key in ("gains", "blocklength", "rate"):
            _expect(key in snr, f"channel.snr.{key}", "missing")
        gains = _vector(snr["gains"], "channel.snr.gains")
        _expect(isinstance(snr["blocklength"], int) and snr["blocklength"] >= 1,
                "channel.snr.blocklength", "expected a positive integer")
        rate = snr["rate"]
        _expect(isinstance(rate, (int, float)) and rate > 0,
                "channel.snr.rate", "expected a positive number")
        try:
            d = np.array([dropout_from_snr(g, snr["blocklength"], float(rate))
                          for g in gains])
        except ChannelError as exc:
            raise ConfigError(f"channel.snr: {exc}") from exc
    else:
        raise ConfigError("channel: needs either 'dropout' or 'snr'")
    try:
        channel = MarkovChannel(P=p, d=d, gains=gains)
    except ValueError as exc:
        raise ConfigError(f"channel: {exc}") from exc

    sim_node = raw.get("simulation", {})
    _expect(isinstance(sim_node, dict), "simulation", "expected an object")
    init = sim_node.get("initial_state", "stationary")
    if isinstance(init, int) and not isinstance(init, bool):
        _expect(1 <= init <= channel.M, "simulation.initial_state",
                f"expected 1..{channel.M} or 'stationary'")
        init = init - 1
    else:
        _expect(init == "stationary", "simulation.initial_state",
                "expected a 1-based state index or 'stationary'")
    try:
        simulation = SimulationConfig(
            horizon=sim_node.get("horizon", 100_000),
            seeds=tuple(sim_node.get("seeds", range(1, 11))),
            initial_state=init,
            mode=sim_node.get("mode", SMART),
            record_trajectory=bool(sim_node.get("record_trajectory", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"simulation: {exc}") from exc

    scan_axes = scan_resolution = None
    if "scan" in raw:
        scan_node = raw["scan"]
        _expect(isinstance(scan_node, dict), "scan", "expected an object")
        axes_node = scan_node.get("axes")
        _expect(isinstance(axes_node, list) and axes_node, "scan.axes",
                "expected a non-empty array")
        axes = []
        for i, ax in enumerate(axes_node):
            _expect(isinstance(ax, dict), f"scan.axes[{i}]", "expected an object")
            state = ax.get("state")
            _expect(isinstance(state, int) and 1 <= state <= channel.M,
                    f"scan.axes[{i}].state", f"expected 1..{channel.M}")
            lo = float(ax.get("min", 0.0))
            hi = float(ax.get("max", 1.0))
            _expect(0.0 <= lo <= hi <= 1.0, f"scan.axes[{i}]",
                    "range must satisfy 0 <= min <= max <= 1")
            axes.append(ScanAxis(state=state - 1, lo=lo, hi=hi))
        scan_axes = tuple(axes)
        scan_resolution = scan_node.get("resolution", 101)
        _expect(isinstance(scan_resolution, int) and scan_resolution >= 2,
                "scan.resolution", "expected an integer >= 2")

    tol_node = raw.get("tolerances", {})
    _expect(isinstance(tol_node, dict), "tolerances", "expected an object")
    tolerances = {
        "spectral": float(tol_node.get("spectral", 1e-12)),
        "series": float(tol_node.get("series", 1e-12)),
    }
    return Experiment(
        system=system,
        channel=channel,
        simulation=simulation,
        scan_axes=scan_axes,
        scan_resolution=scan_resolution,
        tolerances=tolerances,
    )


def experiment_to_config(exp: Experiment) -> dict:
    """Config dict that re-parses to the same in-memory experiment."""
    out = {
        "system": {
            "A": exp.system.A.tolist(),
            "C": exp.system.C.tolist(),
            "W": exp.system.W.tolist(),
            "V": exp.system.V.tolist(),
        },
        "channel": {
            "transition": exp.channel.P.tolist(),
            "dropout": exp.channel.d.tolist(),
        },
        "simulation": {
            "horizon": exp.simulation.horizon,
            "seeds": list(exp.simulation.seeds),
            "mode": exp.simulation.mode,
            "initial_state": exp.simulation.initial_state
            if exp.simulation.initial_state == "stationary"
            else exp.simulation.initial_state + 1,
            "record_trajectory": exp.simulation.record_trajectory,
        },
        "tolerances": dict(exp.tolerances),
    }
    if exp.scan_axes is not None:
        out["scan"] = {
            "axes": [{"state": ax.state + 1, "min": ax.lo, "max": ax.hi}
                     for ax in exp.scan_axes],
            "resolution": exp.scan_resolution,
        }
    return out


def _emit(text: str, out_path: str | None):
    _sys.stdout.write(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_stability(args) -> int:
    exp = load_config(args.config)
    tol = args.tol or exp.tolerances["spectral"]
    report = stability_margin(exp.system, exp.channel, tol=tol)
    out = report.as_dict()
    val = validate(exp.system)
    out["system_observable"] = val.observable
    out["system_controllable"] = val.controllable
    if report.stable:
        filt = riccati_steady_state(exp.system)
        mse = analytic_mse(exp.system, filt, exp.channel,
                           tol=exp.tolerances["series"], report=report)
        out["mse"] = mse.value
        out["mse_truncation"] = mse.truncation
        out["mse_tail_bound"] = mse.tail_bound
        out["mse_uncertain"] = mse.uncertain
    else:
        out["mse"] = "unbounded"
    _emit(json_dumps(out), args.out)
    return 0 if report.stable else 2


def cmd_region(args) -> int:
    exp = load_config(args.config)
    if exp.scan_axes is None:
        raise ConfigError("scan: block is required for the region command")
    resolution = args.resolution or exp.scan_resolution
    filt = None
    if not args.no_mse:
        filt = riccati_steady_state(exp.system)
    scan = region_scan(exp.system, filt, exp.channel, exp.scan_axes,
                       resolution, compute_mse=not args.no_mse,
                       tol=args.tol or exp.tolerances["spectral"])
    if args.format == "svg":
        _emit(scan.to_svg(), args.out)
    else:
        _emit(scan.to_csv(), args.out)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8", newline="") as fh:
            fh.write(scan.to_svg())
    return 0


def cmd_mse(args) -> int:
    exp = load_config(args.config)
    sim = exp.simulation
    if args.seed:
        seeds = tuple(int(s) for s in args.seed.split(","))
        sim = SimulationConfig(horizon=sim.horizon, seeds=seeds,
                               initial_state=sim.initial_state, mode=sim.mode,
                               record_trajectory=sim.record_trajectory)
    if args.trajectory:
        sim = SimulationConfig(horizon=sim.horizon, seeds=sim.seeds,
                               initial_state=sim.initial_state, mode=sim.mode,
                               record_trajectory=True)
    report = stability_margin(exp.system, exp.channel,
                              tol=exp.tolerances["spectral"])
    filt = riccati_steady_state(exp.system)
    out = {"margin": report.margin, "stable": report.stable}
    exit_code = 0

    analytic = None
    if args.analytic or args.both:
        analytic = analytic_mse(exp.system, filt, exp.channel,
                                tol=exp.tolerances["series"], report=report)
        out["analytic"] = {
            "J": "unbounded" if analytic.unbounded else analytic.value,
            "expected_cycle_length": analytic.expected_cycle_length,
            "truncation": analytic.truncation,
            "tail_bound": analytic.tail_bound,
            "uncertain": analytic.uncertain,
        }

    summary = None
    if args.simulate or args.both:
        if sim.mode == CONVENTIONAL:
            runs = simulate_conventional(exp.system, exp.channel, sim, filt=filt)
        else:
            runs = simulate_smart(exp.system, filt, exp.channel, sim)
        try:
            model = cycle_model(exp.channel)
        except ChannelError:
            model = None  # no success process (every state always drops)
        sim_out = {
            "mode": sim.mode,
            "horizon": sim.horizon,
            "per_seed": [r.summary_dict() for r in runs],
        }
        all_saturated = all(r.saturated for r in runs)
        sim_out["all_saturated"] = all_saturated
        mean_j = None
        if not all_saturated and len(runs) >= 2:
            summary = ensemble(runs, channel=exp.channel, model=model)
            sim_out.update(summary.as_dict())
            mean_j = summary.mean_J
        elif not all_saturated:
            mean_j = runs[0].empirical_J
            sim_out["mean_J"] = mean_j
        else:
            exit_code = 2
        out["simulated"] = sim_out
        if args.trajectory:
            with open(args.trajectory, "w", encoding="utf-8", newline="") as fh:
                fh.write(trajectory_csv(runs[0]))

    if args.both and analytic is not None:
        if analytic.unbounded:
            out["comparison"] = {"relative_gap": "unbounded",
                                 "within_5pct": False}
            exit_code = 2
        elif mean_j is not None:
            gap = abs(mean_j - analytic.value) / analytic.value
            ok = gap < 0.05
            out["comparison"] = {"relative_gap": gap, "within_5pct": ok}
            if not ok:
                exit_code = 2
    _emit(json_dumps(out), args.out)
    return exit_code


def _bounds_entry(fn, *fargs, **fkw):
    try:
        fit = fn(*fargs, **fkw)
    except PreconditionError as exc:
        return {"status": "refused", "reason": str(exc)}, None
    d = fit.as_dict()
    d["status"] = "pass" if d.pop("passed") else "fail"
    return d, d["status"]


def cmd_bounds(args) -> int:
    exp = load_config(args.config)
    lo, hi = (int(x) for x in args.range.split(":"))
    rng = (lo, hi)
    eps = args.epsilon
    out = {}
    statuses = []

    entry, st = _bounds_entry(bounds_mod.check_upper_bound, exp.system.A,
                              eps, rng)
    out["matrix_power_upper"] = entry
    statuses.append(st)
    entry, st = _bounds_entry(bounds_mod.check_periodic_lower_bound,
                              exp.system.A, rng)
    out["matrix_power_lower"] = entry
    statuses.append(st)
    entry, st = _bounds_entry(bounds_mod.check_lower_bound_with_q,
                              exp.system.A, exp.system.W, rng)
    out["matrix_power_lower_with_noise"] = entry
    statuses.append(st)
    try:
        dm_report = bounds_mod.check_dm_properties(exp.channel, rng)
        d = dm_report.as_dict()
        d["status"] = "pass" if d.pop("passed") else "fail"
        out["channel_power"] = d
        statuses.append(d["status"])
    except PreconditionError as exc:
        out["channel_power"] = {"status": "refused", "reason": str(exc)}
        statuses.append(None)
    filt = riccati_steady_state(exp.system)
    tr_report = bounds_mod.check_c_envelopes(exp.system, filt, eps, rng)
    d = tr_report.as_dict()
    d["status"] = "pass" if d.pop("passed") else "fail"
    out["error_trace_envelopes"] = d
    statuses.append(d["status"])

    all_passed = all(s != "fail" for s in statuses)
    out["all_passed"] = all_passed
    _emit(json_dumps(out), args.out)
    return 0 if all_passed else 2


def cmd_channel_from_snr(args) -> int:
    gains = [float(g) for g in args.gains.split(",")]
    if any(g <= 0 for g in gains):
        raise ConfigError("gains: all SNRs must be positive")
    d = [dropout_from_snr(g, args.blocklength, args.rate) for g in gains]
    out = {
        "gains": gains,
        "blocklength": args.blocklength,
        "rate": args.rate,
        "dropout": d,
    }
    _emit(json_dumps(out), args.out)
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="remest",
        description="Stability analysis and simulation of remote state "
                    "estimation over Markov fading channels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True,
                           help="JSON config path or bundled fixture name")
        p.add_argument("--out", help="also write the output to this file")

    p = sub.add_parser("stability", help="stability margins and verdicts")
    add_common(p)
    p.add_argument("--tol", type=float, help="spectral iteration tolerance")
    p.set_defaults(fn=cmd_stability)

    p = sub.add_parser("region", help="stability region over a dropout grid")
    add_common(p)
    p.add_argument("--resolution", type=int, help="grid points per axis")
    p.add_argument("--format", choices=("csv", "svg"), default="csv")
    p.add_argument("--svg", help="additionally write an SVG heatmap here")
    p.add_argument("--no-mse", action="store_true",
                   help="skip the per-cell average error column")
    p.add_argument("--tol", type=float)
    p.set_defaults(fn=cmd_region)

    p = sub.add_parser("mse", help="average estimation error, analytic "
                                   "and/or simulated")
    add_common(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--analytic", action="store_true")
    group.add_argument("--simulate", action="store_true")
    group.add_argument("--both", action="store_true")
    p.add_argument("--seed", help="comma-separated seed override")
    p.add_argument("--trajectory",
                   help="write the first seed's per-slot CSV here")
    p.set_defaults(fn=cmd_mse)

    p = sub.add_parser("bounds", help="matrix-power envelope checks")
    add_common(p)
    p.add_argument("--epsilon", type=float, default=0.05,
                   help="margin added to the spectral radius in upper bounds")
    p.add_argument("--range", default="1:200",
                   help="power index range as first:last")
    p.set_defaults(fn=cmd_bounds)

    p = sub.add_parser("channel-from-snr",
                       help="dropout probabilities from per-state SNRs")
    p.add_argument("--gains", required=True,
                   help="comma-separated per-state SNRs")
    p.add_argument("--blocklength", type=int, required=True)
    p.add_argument("--rate", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_channel_from_snr)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ChannelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
