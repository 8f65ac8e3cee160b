"""Reproducible experiment runner.

``darklind run EXPERIMENT`` executes one named experiment per process from a
JSON config plus flag overrides (flags win) and writes plot-ready CSV and a
JSON report into the output directory; ``darklind check`` runs the acceptance
battery.  Exit codes: 0 success, 1 validation failure, 2 numerical failure
(diagnostic JSON left in the output directory), 3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import effective as eff
from .analysis import (
    bloch_of,
    compare_effective_vs_full,
    convergence_sweep,
    dark_state_from_bloch,
    gauge_covariance_check,
    purity,
    purity_prediction_general,
    purity_prediction_spin32,
    trace_distance,
)
from .checks import battery_table, run_battery
from .engine import (
    GaplessLindbladianError,
    InvariantViolationError,
    StepSizeUnderflowError,
    integrate,
)
from .linalg import dagger
from .protocols import (
    custom_protocol,
    fourier_path,
    linear_path,
    smoothstep_path,
    spin32_protocol,
    spin_operators,
)
from .reporting import (
    SWEEP_COLUMNS,
    TRAJECTORY_COLUMNS,
    gnuplot_script,
    resolve_inside,
    write_csv,
    write_json,
    write_text,
)

EXPERIMENTS = ("spin32-purity", "sweep", "gauge-check", "effective-vs-full", "custom")

_NUMERICAL_ERRORS = (
    StepSizeUnderflowError,
    InvariantViolationError,
    GaplessLindbladianError,
    np.linalg.LinAlgError,
    FloatingPointError,
)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "protocol": {
        "family": "spin32",
        "path": {"family": "linear", "m_theta": 1, "m_phi": 0, "theta0": 0.0, "phi0": 0.0},
    },
    "gammaT": 200.0,
    "initial": {"bloch": [0.0, 0.0, 1.0]},
    "tolerances": {"rtol": 1e-9, "atol": 1e-12, "kernel_tol": 1e-8},
    "output_dir": ".",
    "seed": 0,
    "checkpoints": 64,
    "gauge": {"dark_phase": math.pi / 7.0},
    "gnuplot": False,
}


#: config sections that are alternatives, replaced whole rather than merged
_ATOMIC_KEYS = ("initial", "protocol")


def _merge(base: dict, override: dict, atomic: tuple = ()) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in atomic and isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        elif value is not None:
            out[key] = value
    return out


def load_config(path: str | None, overrides: dict) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path) as handle:
                user = json.load(handle)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config root must be an object")
        cfg = _merge(cfg, user, atomic=_ATOMIC_KEYS)
    cfg = _merge(cfg, overrides, atomic=_ATOMIC_KEYS)
    return cfg


def validate_config(cfg: dict) -> dict:
    if cfg.get("experiment") not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
    tols = cfg["tolerances"]
    for name in ("rtol", "atol", "kernel_tol"):
        value = tols.get(name)
        if not isinstance(value, (int, float)) or value <= 0:
            raise ConfigError(f"tolerance {name} must be positive")
    gammaTs = cfg["gammaT"]
    if isinstance(gammaTs, (int, float)):
        gammaTs = [float(gammaTs)]
    else:
        gammaTs = [float(g) for g in gammaTs]
    if not gammaTs or any(g <= 0 for g in gammaTs):
        raise ConfigError("gammaT must be positive")
    for g in gammaTs:
        if g < 10.0:
            print(f"warning: gammaT={g:g} < 10, adiabatic expansion unreliable", file=sys.stderr)
    cfg = dict(cfg)
    cfg["gammaT_list"] = gammaTs
    seed = cfg.get("seed")
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    init = cfg.get("initial", {})
    if "bloch" in init:
        n0 = np.asarray(init["bloch"], dtype=float)
        if n0.shape != (3,) or np.linalg.norm(n0) > 1.0 + 1e-9:
            raise ConfigError("initial.bloch must be a 3-vector of norm <= 1")
    elif "density_matrix" not in init:
        raise ConfigError("initial must provide bloch or density_matrix")
    n_cp = cfg.get("checkpoints")
    if not isinstance(n_cp, int) or n_cp < 1:
        raise ConfigError("checkpoints must be a positive integer")
    return cfg


def _path_from_config(section: dict):
    family = section.get("family", "linear")
    kwargs = {
        "m_theta": int(section.get("m_theta", 1)),
        "m_phi": int(section.get("m_phi", 0)),
        "theta0": float(section.get("theta0", 0.0)),
        "phi0": float(section.get("phi0", 0.0)),
    }
    if family == "linear":
        return linear_path(**kwargs)
    if family == "smoothstep":
        return smoothstep_path(**kwargs)
    if family == "fourier":
        return fourier_path(
            **kwargs,
            theta_knots=section.get("theta_knots", ()),
            phi_knots=section.get("phi_knots", ()),
        )
    raise ConfigError(f"unknown path family {family!r}")


def _angle_fn(section: dict):
    family = section.get("family", "linear")
    m = float(section.get("m", 0))
    a0 = float(section.get("a0", 0.0))
    w = 2.0 * math.pi * m
    if family == "linear":
        return (lambda s: a0 + w * s), (lambda s: w)
    if family == "smoothstep":
        return (
            lambda s: a0 + w * s * s * (3.0 - 2.0 * s),
            lambda s: w * 6.0 * s * (1.0 - s),
        )
    raise ConfigError(f"unknown angle family {family!r}")


def build_protocol(cfg: dict, gammaT: float):
    section = cfg["protocol"]
    family = section.get("family", "spin32")
    if family == "spin32":
        return spin32_protocol(_path_from_config(section.get("path", {})), gammaT)
    if family != "custom":
        raise ConfigError(f"unknown protocol family {family!r}")
    two_j = int(section.get("two_j", 1))
    sx, sy, sz = spin_operators(two_j)
    named = {"sx": sx, "sy": sy, "sz": sz}
    try:
        generators = [named[g] for g in section.get("generators", [])]
    except KeyError as exc:
        raise ConfigError(f"unknown generator {exc}") from exc
    angle_sections = section.get("angles", [])
    if len(angle_sections) != len(generators):
        raise ConfigError("need one angle entry per generator")
    angles, dangles = [], []
    for entry in angle_sections:
        fn, dfn = _angle_fn(entry)
        angles.append(fn)
        dangles.append(dfn)
    jump_name = section.get("jump", "lowering")
    if jump_name == "lowering":
        jump = sx + 1j * sy  # raising in descending-m basis maps m -> m+1; adjoint lowers
        jump = dagger(jump)
    elif jump_name == "spin32":
        if two_j != 3:
            raise ConfigError("jump 'spin32' requires two_j = 3")
        jump = sx @ (sz @ sz - 0.25 * np.eye(4))
    else:
        raise ConfigError(f"unknown jump {jump_name!r}")
    try:
        return custom_protocol(
            generators, angles, jump, gammaT, dangles=dangles,
            descriptor={"family": "custom", "two_j": two_j,
                        "generators": list(section.get("generators", [])),
                        "jump": jump_name, "gammaT": gammaT},
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _initial_dark_state(cfg: dict, ds) -> tuple[np.ndarray, np.ndarray | None]:
    init = cfg["initial"]
    if "bloch" in init:
        if ds.d != 2:
            raise ConfigError("bloch initial state requires a two-dimensional dark space")
        n0 = np.asarray(init["bloch"], dtype=float)
        return dark_state_from_bloch(n0), n0
    raw = init["density_matrix"]
    mat = np.asarray(raw.get("re"), dtype=float) + 1j * np.asarray(raw.get("im", 0.0), dtype=float)
    rho = eff._coerce_dark_state(mat, ds)
    return rho, None


def run_trajectory_experiment(cfg: dict) -> tuple[list, dict, list]:
    gammaT = cfg["gammaT_list"][0]
    proto = build_protocol(cfg, gammaT)
    ds = eff.dark_space(proto.L_rot)
    rho_d, n0 = _initial_dark_state(cfg, ds)
    tols = cfg["tolerances"]
    taus = np.linspace(0.0, gammaT, cfg["checkpoints"] + 1)
    traj = integrate(
        eff.lab_generator(proto), eff.embed_dark(ds, rho_d), (0.0, gammaT),
        rtol=tols["rtol"], atol=tols["atol"], checkpoints=taus,
    )
    eff_states = eff.evolve_effective(rho_d, proto, ds, taus)
    rows = []
    for tau, state, rho_eff in zip(traj.times, traj.states, eff_states):
        u = proto.U(min(max(tau / gammaT, 0.0), 1.0))
        dd = dagger(ds.basis) @ (u @ state @ dagger(u)) @ ds.basis
        if ds.d == 2:
            nx, ny, nz = bloch_of(dd)
        else:
            nx = ny = nz = math.nan
        rows.append((
            tau,
            purity(state),
            float(np.trace(state).real),
            float(np.linalg.eigvalsh(0.5 * (state + dagger(state))).min()),
            nx, ny, nz,
            trace_distance(dd, rho_eff),
        ))
    loss_exact = 1.0 - purity(traj.final)
    report = {
        "experiment": cfg["experiment"],
        "gammaT": gammaT,
        "purity_loss_exact": loss_exact,
        "purity_loss_eq12": 1.0 - purity_prediction_general(rho_d, proto, ds),
        "step_stats": {
            "accepted": traj.step_stats.accepted,
            "rejected": traj.step_stats.rejected,
            "rhs_evaluations": traj.step_stats.rhs_evaluations,
        },
        "dark_dimension": ds.d,
    }
    if proto.descriptor.get("family") == "spin32" and n0 is not None:
        path = _path_from_config(cfg["protocol"].get("path", {}))
        report["purity_loss_eq21"] = 1.0 - purity_prediction_spin32(path, n0, gammaT)
    return rows, report, list(TRAJECTORY_COLUMNS)


def run_sweep_experiment(cfg: dict) -> tuple[list, dict, list]:
    gammaTs = cfg["gammaT_list"]
    ds_probe = eff.dark_space(build_protocol(cfg, gammaTs[0]).L_rot)
    rho_d, n0 = _initial_dark_state(cfg, ds_probe)
    tols = cfg["tolerances"]
    result = convergence_sweep(
        lambda g: build_protocol(cfg, g),
        gammaTs,
        n0 if n0 is not None else rho_d,
        rtol=tols["rtol"], atol=tols["atol"],
    )
    rows = [
        (g, loss, l12, l21, dist)
        for g, loss, l12, l21, dist in zip(
            result.gammaT_values, result.losses, result.losses_eq12,
            result.losses_eq21, result.errors,
        )
    ]
    report = {
        "experiment": "sweep",
        "gammaT": list(result.gammaT_values),
        "purity_loss_exact": list(result.losses),
        "purity_loss_eq12": list(result.losses_eq12),
        "purity_loss_eq21": list(result.losses_eq21),
        "trace_distance_final": list(result.errors),
        "first_order_trace_distance_final": list(result.first_order_errors),
        "fitted_slope": result.fitted_slope,
        "fit_r2": result.fit_r2,
        "error_slope": result.error_slope,
        "first_order_slope": result.first_order_slope,
        "loss_prefactor": result.loss_prefactor,
        "failures": list(result.failures),
        "flags": {
            "slope_in_window": bool(-1.15 <= result.fitted_slope <= -0.85)
            if not math.isnan(result.fitted_slope) else False,
            "fit_r2_ok": bool(result.fit_r2 >= 0.99) if not math.isnan(result.fit_r2) else False,
            "effective_order_in_window": bool(-2.4 <= result.error_slope <= -1.6)
            if not math.isnan(result.error_slope) else False,
            "first_order_in_window": bool(-1.2 <= result.first_order_slope <= -0.8)
            if not math.isnan(result.first_order_slope) else False,
        },
    }
    return rows, report, list(SWEEP_COLUMNS)


def run_gauge_experiment(cfg: dict) -> tuple[list, dict, list]:
    gammaTs = cfg["gammaT_list"]
    if len(gammaTs) == 1:
        gammaTs = [gammaTs[0], 2.0 * gammaTs[0]]
    proto = build_protocol(cfg, gammaTs[0])
    ds = eff.dark_space(proto.L_rot)
    rho_d, _ = _initial_dark_state(cfg, ds)
    phase = float(cfg.get("gauge", {}).get("dark_phase", math.pi / 7.0))
    rng = np.random.default_rng(cfg["seed"])
    dim = proto.dim
    rand = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    bright_gen = 0.5 * (rand + dagger(rand))
    if ds.d == 2:
        dark_gen = phase * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
    else:
        diag = np.arange(ds.d) - 0.5 * (ds.d - 1)
        dark_gen = phase * np.diag(diag).astype(complex)
    report_obj = gauge_covariance_check(
        proto, ds, dark_gen, gammaT_pair=tuple(gammaTs[:2]),
        rho_init=rho_d, bright_generator=bright_gen,
    )
    rows = [
        (g, d, pp, pt, diff)
        for g, d, pp, pt, diff in zip(
            report_obj.gammaT_values, report_obj.defects, report_obj.purity_plain,
            report_obj.purity_tilted, report_obj.purity_differences,
        )
    ]
    report = {
        "experiment": "gauge-check",
        "gammaT": list(report_obj.gammaT_values),
        "covariance_defects": list(report_obj.defects),
        "defect_ratio": report_obj.defect_ratio,
        "purity_plain": list(report_obj.purity_plain),
        "purity_tilted": list(report_obj.purity_tilted),
        "purity_differences": list(report_obj.purity_differences),
        "dark_phase": phase,
        "flags": {
            "defect_shrinks": bool(report_obj.defect_ratio <= 0.7),
            "purity_gauge_invariant": bool(all(
                diff <= 10.0 / g**2
                for diff, g in zip(report_obj.purity_differences, report_obj.gammaT_values)
            )),
        },
    }
    columns = ["gammaT", "covariance_defect", "purity_plain", "purity_tilted", "purity_difference"]
    return rows, report, columns


def run_effective_vs_full_experiment(cfg: dict) -> tuple[list, dict, list]:
    gammaTs = cfg["gammaT_list"]
    tols = cfg["tolerances"]
    ds_probe = eff.dark_space(build_protocol(cfg, gammaTs[0]).L_rot)
    rho_d, n0 = _initial_dark_state(cfg, ds_probe)
    init = n0 if n0 is not None else rho_d
    if len(gammaTs) == 1:
        comparison = compare_effective_vs_full(
            build_protocol(cfg, gammaTs[0]), init,
            n_checkpoints=cfg["checkpoints"], rtol=tols["rtol"], atol=tols["atol"],
        )
        rows = [
            (tau, dist, pe, pf)
            for tau, dist, pe, pf in zip(
                comparison.taus, comparison.distances,
                comparison.puritys_exact, comparison.puritys_effective,
            )
        ]
        report = {
            "experiment": "effective-vs-full",
            "gammaT": gammaTs[0],
            "max_distance": comparison.max_distance,
            "final_distance": comparison.final_distance,
        }
        return rows, report, ["tau", "trace_distance", "purity_exact", "purity_effective"]
    finals = []
    for g in gammaTs:
        comparison = compare_effective_vs_full(
            build_protocol(cfg, g), init, n_checkpoints=8,
            rtol=tols["rtol"], atol=tols["atol"],
        )
        finals.append(comparison.final_distance)
    from .analysis import fit_loglog

    slope, _, r2 = fit_loglog(gammaTs, finals)
    rows = [(g, d) for g, d in zip(gammaTs, finals)]
    report = {
        "experiment": "effective-vs-full",
        "gammaT": list(gammaTs),
        "final_distances": finals,
        "distance_slope": slope,
        "distance_r2": r2,
    }
    return rows, report, ["gammaT", "trace_distance_final"]


_RUNNERS = {
    "spin32-purity": run_trajectory_experiment,
    "custom": run_trajectory_experiment,
    "sweep": run_sweep_experiment,
    "gauge-check": run_gauge_experiment,
    "effective-vs-full": run_effective_vs_full_experiment,
}


def run_experiment(cfg: dict) -> int:
    cfg = validate_config(cfg)
    outdir = Path(os.environ.get("DARKLIND_OUTDIR") or cfg["output_dir"])
    stem = cfg["experiment"].replace("-", "_")
    started = time.time()
    try:
        rows, report, columns = _RUNNERS[cfg["experiment"]](cfg)
    except _NUMERICAL_ERRORS as exc:
        diagnostic = {
            "experiment": cfg["experiment"],
            "error": type(exc).__name__,
            "message": str(exc),
            "tau": getattr(exc, "tau", None),
        }
        write_json(resolve_inside(outdir, f"{stem}_diagnostic.json"), diagnostic)
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    csv_path = resolve_inside(outdir, f"{stem}.csv")
    write_csv(csv_path, columns, rows)
    report = dict(report)
    report["config"] = {k: v for k, v in cfg.items() if k != "gammaT_list"}
    report["seed"] = cfg["seed"]
    report["csv"] = csv_path.name
    report["csv_rows"] = [list(map(float, row)) for row in rows]
    report["csv_columns"] = columns
    report["runtime_s"] = time.time() - started
    report["version"] = __version__
    write_json(resolve_inside(outdir, f"{stem}_report.json"), report)
    if cfg.get("gnuplot"):
        ycols = [c for c in columns[1:] if not c.startswith("trace_distance")] or columns[1:]
        script = gnuplot_script(csv_path.name, columns, ycols, cfg["experiment"])
        write_text(resolve_inside(outdir, f"{stem}.gnuplot"), script)
    return 0


def run_check(args) -> int:
    results = run_battery(
        tolerance_scale=args.tolerance_scale, rtol=args.rtol, atol=args.atol
    )
    payload = {
        "criteria": [
            {
                "number": r.number,
                "name": r.name,
                "expected": r.expected,
                "observed": r.observed,
                "passed": r.passed,
                "runtime_s": r.runtime_s,
                "detail": r.detail,
            }
            for r in results
        ],
        "all_passed": all(r.passed for r in results),
        "tolerance_scale": args.tolerance_scale,
    }
    if args.json:
        print(json.dumps(_sanitize(payload), indent=2, sort_keys=True))
    else:
        print(battery_table(results), end="")
    if args.output:
        write_json(Path(args.output), payload)
    return 0 if payload["all_passed"] else 3


def _sanitize(obj):
    from .reporting import _jsonable

    return _jsonable(obj)


def _parse_n0(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated components")
    return parts


def _parse_gammaT(text: str):
    values = [float(v) for v in text.split(",")]
    return values[0] if len(values) == 1 else values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="darklind",
        description="Dissipative dark-space adiabatic manipulation experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a named experiment")
    run_p.add_argument("experiment", nargs="?", choices=EXPERIMENTS,
                       help="experiment name (may also come from the config)")
    run_p.add_argument("--config", help="JSON config file")
    run_p.add_argument("--gammaT", type=_parse_gammaT, help="cycle duration(s), comma separated")
    run_p.add_argument("--n0", type=_parse_n0, help="initial Bloch vector, e.g. 0,0,1")
    run_p.add_argument("--outdir", help="output directory (env DARKLIND_OUTDIR overrides)")
    run_p.add_argument("--seed", type=int, help="seed for randomized test matrices")
    run_p.add_argument("--rtol", type=float, help="integration relative tolerance")
    run_p.add_argument("--atol", type=float, help="integration absolute tolerance")
    run_p.add_argument("--kernel-tol", type=float, help="superoperator kernel threshold")
    run_p.add_argument("--checkpoints", type=int, help="number of trajectory checkpoints")
    run_p.add_argument("--gauge-phase", type=float, help="dark-block gauge phase")
    run_p.add_argument("--gnuplot", action="store_true", default=None,
                       help="also emit a gnuplot script")

    check_p = sub.add_parser("check", help="run the acceptance battery")
    check_p.add_argument("--json", action="store_true", help="machine-readable results")
    check_p.add_argument("--output", help="also write the JSON results to a file")
    check_p.add_argument("--tolerance-scale", type=float, default=1.0,
                         help="scale factor on every acceptance window (testing aid)")
    check_p.add_argument("--rtol", type=float, default=1e-9)
    check_p.add_argument("--atol", type=float, default=1e-12)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "check":
        return run_check(args)

    overrides: dict = {
        "experiment": args.experiment,
        "gammaT": args.gammaT,
        "output_dir": args.outdir,
        "seed": args.seed,
        "gnuplot": args.gnuplot,
        "checkpoints": args.checkpoints,
    }
    if args.n0 is not None:
        overrides["initial"] = {"bloch": args.n0}
    tol_override = {}
    if args.rtol is not None:
        tol_override["rtol"] = args.rtol
    if args.atol is not None:
        tol_override["atol"] = args.atol
    if args.kernel_tol is not None:
        tol_override["kernel_tol"] = args.kernel_tol
    if tol_override:
        overrides["tolerances"] = tol_override
    if args.gauge_phase is not None:
        overrides["gauge"] = {"dark_phase": args.gauge_phase}
    try:
        cfg = load_config(args.config, overrides)
        return run_experiment(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
