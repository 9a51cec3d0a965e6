"""Batch command-line front end.

Usage::

    vqueue <command> --config exp.json [--seed N] [--out DIR] [--jobs N]
                     [--sampler thinning|inversion] [--gate]

Commands: validate, simulate, stationary, hitting, dynkin, jumpprob,
converge. Each run writes ``report.json`` (statistical output only, so it
is byte-identical for a fixed config and seed), an optional ``table.csv``
or ``curve.csv``, and ``manifest.json`` (config echo, versions, wall time,
stream seeds and file digests).

Exit codes: 0 success, 1 config error, 2 condition validation failure,
3 statistical gate failure or unstable run.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import estimators as est
from ._backend import BACKEND
from ._errors import SimulationError
from .expr import ExprSyntaxError
from .intensity import (
    GridSpec,
    IntensityField,
    lyapunov_text,
    truncate_text,
    validate_conditions,
)
from .rng import SeedSpec, default_jobs, record_streams
from .simulate import collect_cycles, simulate_path
from .state import StateX

EXIT_OK, EXIT_CONFIG, EXIT_VALIDATION, EXIT_GATE = 0, 1, 2, 3
COMMANDS = ("validate", "simulate", "stationary", "hitting", "dynkin", "jumpprob", "converge")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# config handling


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise ConfigError("config must be an object with a 'model' block")
    cfg.setdefault("experiment", {})
    return cfg


def build_field(model: dict) -> IntensityField:
    try:
        return IntensityField.from_strings(
            model["lambda"],
            model["h"],
            model.get("lambda0"),
            float(model["lambda_sup"]),
            float(model["h_sup"]),
        )
    except KeyError as exc:
        raise ConfigError(f"model is missing {exc.args[0]!r}") from exc
    except ExprSyntaxError as exc:
        raise ConfigError(f"bad expression: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model: {exc}") from exc


def _state(v) -> StateX:
    try:
        return StateX(*v) if isinstance(v, (list, tuple)) else StateX.of(v)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad state {v!r}: {exc}") from exc


def _need(exp: dict, key: str):
    if key not in exp:
        raise ConfigError(f"experiment block is missing {key!r}")
    return exp[key]


def _within(e: est.EstimateCI, target: float, z: float = 3.0) -> bool:
    return abs(e.value - target) <= z * e.std_error


# --------------------------------------------------------------------------
# commands; each returns (report, {csv name: (header, rows)}, gate checks)


def cmd_validate(f, exp, seed, args):
    grid = GridSpec(**exp["grid"]) if "grid" in exp else None
    rep = validate_conditions(f, grid, c0_min=float(exp.get("c0_min", 0.0)))
    return {"conditions": rep.to_dict()}, {}, {}


def cmd_simulate(f, exp, seed, args):
    s0 = _state(exp.get("start", [0, 0, 0]))
    horizon = float(_need(exp, "horizon"))
    path = simulate_path(f, s0, horizon, seed, sampler=args.sampler,
                         max_events=int(exp.get("max_events", 10**8)))
    buf = io.StringIO()
    path.to_csv(buf)
    end = path.state_at(horizon)
    report = {
        "sampler": args.sampler,
        "start": list(s0.as_tuple()),
        "horizon": horizon,
        "events": len(path.events),
        "arrivals": path.arrivals,
        "service_ends": len(path.events) - path.arrivals,
        "final_state": list(end.as_tuple()),
    }
    return report, {"trajectory.csv": buf.getvalue()}, {}


def cmd_stationary(f, exp, seed, args):
    cycles = int(_need(exp, "cycles"))
    m_max = int(exp.get("m_max", 10))
    functionals = list(exp.get("functionals", []))
    cs = collect_cycles(f, int(exp.get("warmup_cycles", 0)), cycles, functionals, seed,
                        levels=int(exp.get("levels", 64)), jobs=args.jobs)
    table = est.availability_table(cs, m_max)
    total = est.ratio_estimate(cs.occupation.sum(axis=1), cs.lengths).value
    means = {g: est.stationary_functional(cs, g) for g in functionals}
    report = {
        "cycles": len(cs),
        "mean_cycle_length": est.mean_estimate(cs.lengths).to_dict(),
        "availability": [dict(m=m, **e.to_dict()) for m, e in enumerate(table)],
        "availability_total": total,
        "functionals": {g: e.to_dict() for g, e in means.items()},
    }
    rows = [[m, e.value, e.std_error, e.ci_low, e.ci_high, e.n_samples] for m, e in enumerate(table)]
    checks = {}
    for m, target in enumerate(exp.get("expected_availability", [])):
        checks[f"availability_{m}"] = _within(table[m], target)
    for g, target in exp.get("expected_functionals", {}).items():
        checks[f"functional_{g}"] = _within(means[g], target)
    if "max_std_error" in exp:
        checks["std_error"] = table[0].std_error <= exp["max_std_error"]
    return report, {"table.csv": (["m", "value", "std_error", "ci_low", "ci_high", "n_samples"], rows)}, checks


def cmd_hitting(f, exp, seed, args):
    k, m = int(exp.get("k", 1)), int(exp.get("m", 2))
    if not m > k:
        raise ConfigError("hitting experiments need m > k")
    starts = [_state(s) for s in _need(exp, "starts")]
    tab = est.hitting_moment_experiment(
        f, starts, k, m, int(_need(exp, "replicas")), seed, cap=float(exp.get("cap", 1e6)),
        jobs=args.jobs, max_censored=float(exp.get("max_censored", 0.01)),
    )
    rows = [[*r.start.as_tuple(), r.moment.value, r.moment.std_error, r.lyapunov, r.ratio,
             r.censored_fraction] for r in tab.rows]
    checks = {}
    busy = [r for r in tab.rows if r.start.n > 0]
    if busy and "trend_factor" in exp:
        checks["ratio_trend"] = tab.max_ratio <= busy[0].ratio * float(exp["trend_factor"])
    for r, target in zip(tab.rows, exp.get("expected", [])):
        if target is not None:
            checks[f"moment_{r.start.as_tuple()}"] = _within(r.moment, target)
    header = ["n", "x", "y", "moment", "std_error", "lyapunov", "ratio", "censored_fraction"]
    return tab.to_dict(), {"table.csv": (header, rows)}, checks


def _dynkin_functions(exp) -> list[tuple[str, str, bool]]:
    """(label, text, gated) triples; truncated Lyapunov functions are gated,
    raw ones are reported alongside."""
    cap = float(exp.get("cap", 1e3))
    out = [(t, t, True) for t in exp.get("test_functions", [])]
    for entry in exp.get("lyapunov", []):
        k, m = int(entry.get("k", 0)), int(entry["m"])
        raw = lyapunov_text(m, k)
        label = f"L_{k},{m}" if k else f"L_{m}"
        out.append((f"{label} truncated", truncate_text(raw, cap), True))
        out.append((f"{label} raw", raw, False))
    if not out:
        raise ConfigError("dynkin needs 'test_functions' or 'lyapunov'")
    return out


def cmd_dynkin(f, exp, seed, args):
    s0 = _state(exp.get("start", [1, 0, 0]))
    horizon = float(_need(exp, "horizon"))
    replicas = int(_need(exp, "replicas"))
    max_rel = float(exp.get("max_relative_se", 0.02))
    results, rows, checks = [], [], {}
    for label, text, gated in _dynkin_functions(exp):
        r = est.dynkin_report(f, text, s0, horizon, replicas, seed.spawn(label), jobs=args.jobs)
        results.append({"label": label, "gated": gated, **r.to_dict()})
        rows.append([label, r.residual.value, r.residual.std_error, r.scale, r.relative_se])
        if gated:
            checks[label] = _within(r.residual, 0.0) and r.relative_se <= max_rel
    header = ["test_function", "residual", "std_error", "scale", "relative_se"]
    return {"results": results}, {"table.csv": (header, rows)}, checks


def cmd_jumpprob(f, exp, seed, args):
    rep = est.jump_probability_experiment(
        f, _state(_need(exp, "start")), _need(exp, "deltas"), int(_need(exp, "trials")), seed,
        jobs=args.jobs,
    )
    header = ["delta", "p_none", "survival", "p_up_only", "int_lambda", "p_down_only", "int_h",
              "p_two_plus"]
    rows = [[r.delta, r.p_none, r.survival, r.p_up_only, r.int_lambda, r.p_down_only, r.int_h,
             r.p_two_plus] for r in rep.rows]
    checks = {
        "no_jump": all(r.none_ok for r in rep.rows),
        "one_up": all(r.up_ok for r in rep.rows),
        "one_down": all(r.down_ok for r in rep.rows),
        "two_plus_ratio": rep.ratios_ok,
    }
    return rep.to_dict(), {"table.csv": (header, rows)}, checks


def _curve(f, start, exp, seed, args, reference):
    stationary = start == "stationary"
    s0 = start if stationary else _state(start)
    window = exp.get("window")
    return est.convergence_experiment(
        f, s0, [float(t) for t in _need(exp, "time_grid")], int(_need(exp, "replicas")),
        seed.spawn("start", str(start)), reference, bootstrap=int(exp.get("bootstrap", 200)),
        window=tuple(window) if window else None,
        stationary_warmup=float(exp.get("stationary_warmup", 200.0)),
        require_fit=not stationary, jobs=args.jobs,
    )


def cmd_converge(f, exp, seed, args):
    start = _need(exp, "start")
    reference = est.stationary_reference(f, int(exp.get("reference_cycles", 10**5)), seed,
                                         levels=int(exp.get("levels", 64)), jobs=args.jobs)
    curve = _curve(f, start, exp, seed, args, reference)
    report = {"start": start, **curve.to_dict(), "monotone_within_noise": curve.monotone_within_noise()}
    extra = {}
    for other in exp.get("extra_starts", []):
        c = _curve(f, other, dict(exp, window=None), seed, args, reference)
        extra[json.dumps(other)] = c.to_dict()
    if extra:
        report["exploratory_starts"] = extra
    rows = [[t, v, curve.noise_floor] for t, v in zip(curve.times, curve.tv_estimates)]
    if start == "stationary":
        checks = {"at_noise_floor": bool(curve.at_floor.all())}
    else:
        checks = {
            "slope": curve.fit_exponent is not None
            and curve.fit_exponent <= float(exp.get("max_slope", -1.0)),
        }
        if exp.get("require_monotone", True):
            checks["monotone"] = curve.monotone_within_noise()
    return report, {"curve.csv": (["t", "tv", "tv_noise_floor"], rows)}, checks


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "stationary": cmd_stationary,
    "hitting": cmd_hitting,
    "dynkin": cmd_dynkin,
    "jumpprob": cmd_jumpprob,
    "converge": cmd_converge,
}


# --------------------------------------------------------------------------
# output


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _write(out: Path, name: str, text: str) -> str:
    data = text.encode()
    (out / name).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def run(argv=None) -> int:
    p = argparse.ArgumentParser(prog="vqueue", description=__doc__.split("\n\n")[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, help="override the config seed (unsigned 64-bit)")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.add_argument("--sampler", choices=("thinning", "inversion"), default="thinning")
    p.add_argument("--gate", action="store_true", help="exit 3 when a statistical check fails")
    args = p.parse_args(argv)
    started = time.perf_counter()

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        seed = SeedSpec(int(cfg.get("seed", 0)))
        if args.sampler == "inversion" and args.command != "simulate":
            raise ConfigError("the inversion sampler is only available for 'simulate'")
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        f = build_field(cfg["model"])
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(args.out or cfg.get("output_dir", "vqueue-out"))
    out.mkdir(parents=True, exist_ok=True)
    conditions = validate_conditions(f, c0_min=float(cfg["experiment"].get("c0_min", 0.0)))

    exit_code = EXIT_OK
    with record_streams() as streams:
        try:
            if args.command == "validate":
                report, files, checks = cmd_validate(f, cfg["experiment"], seed, args)
                if not conditions.ok:
                    exit_code = EXIT_VALIDATION
            elif not conditions.ok:
                print("condition validation failed:\n  " + "\n  ".join(conditions.messages), file=sys.stderr)
                return EXIT_VALIDATION
            else:
                report, files, checks = HANDLERS[args.command](f, cfg["experiment"], seed, args)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (est.CensoringError, est.UninformativeGridError, SimulationError) as exc:
            print(f"{args.command} failed: {exc}", file=sys.stderr)
            return EXIT_GATE

    gate = {"checks": checks, "passed": all(checks.values())}
    full = {
        "command": args.command,
        "version": __version__,
        "model": cfg["model"],
        "experiment": cfg["experiment"],
        "seed": seed.master_seed,
        "result": report,
        "gate": gate,
    }
    digests = {"report.json": _write(out, "report.json", _dumps(full))}
    for name, content in files.items():
        text = content if isinstance(content, str) else _csv_text(*content)
        digests[name] = _write(out, name, text)
    manifest = {
        "config": cfg,
        "command": args.command,
        "version": __version__,
        "backend": BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "jobs": args.jobs,
        "sampler": args.sampler,
        "wall_time_s": time.perf_counter() - started,
        "streams": streams,
        "files": digests,
    }
    _write(out, "manifest.json", _dumps(manifest))

    print(f"{args.command}: wrote {', '.join(sorted(digests))} to {out}")
    for name, ok in checks.items():
        print(f"  {'PASS' if ok else 'FAIL'} {name}")
    if args.gate and not gate["passed"]:
        return EXIT_GATE
    return exit_code


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
