"""Command-line interface: smooth, profile, register, boxplot, simulate.

Every subcommand reads an optional flat key=value config, applies flag
overrides, writes its outputs atomically under the output directory, and
exits nonzero with one machine-readable JSON error line on stderr when
anything fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .depth import functional_boxplot, pointwise_boxplots
from .io import (
    PipelineConfig,
    atomic_write_text,
    ingest,
    read_curves_dir,
    write_curve,
    write_json,
)
from .profiles import PipelineStageError, two_step_estimate
from .registration import LandmarkRegistration
from .simulation import SimulationConfig, TEST_FUNCTIONS, run_study
from .smoothing import (
    estimate_variances,
    evaluate,
    fit_spline,
    floored_variances,
    select_lambda_joint,
)

__all__ = ["main"]

_CONFIG_FLAGS = {
    "order": int,
    "criterion": str,
    "lam": float,
    "lam_mono": float,
    "trim": float,
    "eps_stop": float,
    "n_landmarks": int,
    "group_gap": float,
    "warp_window": float,
    "min_secant": float,
    "grid_step": float,
    "station_step": float,
    "sigma_x": float,
    "sigma_v": float,
}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--seed", type=int, help="random seed (simulate)")
    parser.add_argument("--out", help="output directory")
    for name, caster in _CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=caster, dest=name)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speedprof",
        description="speed-profile estimation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_smooth = sub.add_parser("smooth", help="fit the derivative-matched spline to a trace")
    p_smooth.add_argument("trace", help="trace CSV (t,x,v[,pass_id])")
    _add_common(p_smooth)
    p_smooth.set_defaults(handler=_cmd_smooth)

    p_profile = sub.add_parser("profile", help="estimate the space-speed profile of a trace")
    p_profile.add_argument("trace", help="trace CSV (t,x,v[,pass_id])")
    _add_common(p_profile)
    p_profile.set_defaults(handler=_cmd_profile)

    p_register = sub.add_parser("register", help="landmark-register a directory of curves")
    p_register.add_argument("curves", help="directory of x,v curve CSV files")
    _add_common(p_register)
    p_register.set_defaults(handler=_cmd_register)

    p_boxplot = sub.add_parser("boxplot", help="functional boxplot of a directory of curves")
    p_boxplot.add_argument("curves", help="directory of x,v curve CSV files")
    _add_common(p_boxplot)
    p_boxplot.set_defaults(handler=_cmd_boxplot)

    p_simulate = sub.add_parser("simulate", help="run the Monte-Carlo benchmark study")
    p_simulate.add_argument(
        "--function",
        choices=sorted(TEST_FUNCTIONS) + ["all"],
        default="all",
        help="benchmark function (default: all)",
    )
    p_simulate.add_argument("--runs", type=int, dest="n_runs", help="Monte-Carlo replicates")
    _add_common(p_simulate)
    p_simulate.set_defaults(handler=_cmd_simulate)

    return parser


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FLAGS}
    overrides["seed"] = getattr(args, "seed", None)
    overrides["out_dir"] = getattr(args, "out", None)
    overrides["n_runs"] = getattr(args, "n_runs", None)
    return config.with_overrides(**overrides)


def _out_path(config: PipelineConfig, name: str) -> str:
    os.makedirs(config.out_dir, exist_ok=True)
    return os.path.join(config.out_dir, name)


def _stem(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def _pass_suffix(index: int, total: int) -> str:
    return "" if total == 1 else f"_pass{index}"


def _auto_lam(config: PipelineConfig) -> float | None:
    return None if np.isnan(config.lam) else float(config.lam)


def _cmd_smooth(args, config: PipelineConfig) -> int:
    sets = ingest(args.trace)
    stem = _stem(args.trace)
    report = []
    for i, data in enumerate(sets):
        est = estimate_variances(
            data,
            order=config.order,
            criterion=config.criterion,
            bounds=(config.lambda_min, config.lambda_max),
        )
        variances = floored_variances(est)
        lam = _auto_lam(config)
        if lam is None:
            lam = select_lambda_joint(
                data,
                order=config.order,
                criterion=config.criterion,
                variances=variances,
                bounds=(config.lambda_min, config.lambda_max),
            )
        fit = fit_spline(data, order=config.order, lam=lam, variances=variances)
        suffix = _pass_suffix(i, len(sets))
        fitted_path = _out_path(config, f"smooth_{stem}{suffix}.csv")
        x_fit = evaluate(fit, data.times)
        v_fit = evaluate(fit, data.times, deriv=1)
        lines = ["t,x_fit,v_fit"] + [
            f"{t!r},{x!r},{v!r}" for t, x, v in zip(data.times, x_fit, v_fit)
        ]
        atomic_write_text(fitted_path, "\n".join(lines) + "\n")
        report.append(
            {
                "pass": i,
                "n": data.n,
                "lambda": lam,
                "sigma_x_sq": est.sigma_x_sq,
                "sigma_v_sq": est.sigma_v_sq,
                "criterion": config.criterion,
                "condition": fit.condition,
                "fitted_csv": os.path.basename(fitted_path),
            }
        )
    write_json(_out_path(config, f"smooth_{stem}.json"), {"trace": os.path.basename(args.trace), "passes": report})
    return 0


def _cmd_profile(args, config: PipelineConfig) -> int:
    from .plots import plot_profile

    sets = ingest(args.trace)
    stem = _stem(args.trace)
    report = []
    for i, data in enumerate(sets):
        profile = two_step_estimate(
            data,
            order=config.order,
            criterion=config.criterion,
            lam=_auto_lam(config),
            lam_mono=config.lam_mono,
            trim=config.trim,
            eps_stop=config.eps_stop,
        )
        suffix = _pass_suffix(i, len(sets))
        x, v = profile.on_grid(config.grid_step)
        curve_path = _out_path(config, f"profile_{stem}{suffix}.csv")
        write_curve(curve_path, x, v)
        plot_profile(
            _out_path(config, f"profile_{stem}{suffix}.svg"),
            x,
            v,
            stop_intervals=profile.stop_intervals,
            title=f"speed profile: {stem}{suffix}",
        )
        est = profile.provenance["variances"]
        report.append(
            {
                "pass": i,
                "n": data.n,
                "lambda": profile.provenance["lambda"],
                "sigma_x_sq": None if est is None else est.sigma_x_sq,
                "sigma_v_sq": None if est is None else est.sigma_v_sq,
                "window": [profile.x_lo, profile.x_hi],
                "stop_intervals": [list(pair) for pair in profile.stop_intervals],
                "monotone_converged": profile.provenance["monotone"].converged,
                "curve_csv": os.path.basename(curve_path),
            }
        )
    write_json(_out_path(config, f"profile_{stem}.json"), {"trace": os.path.basename(args.trace), "passes": report})
    return 0


def _common_grid(curves, step: float):
    lo = max(float(x[0]) for _, x, _ in curves)
    hi = min(float(x[-1]) for _, x, _ in curves)
    if hi <= lo:
        raise ValueError("curve domains do not overlap")
    count = int(np.floor((hi - lo) / step + 1e-12)) + 1
    grid = lo + step * np.arange(count)
    rows = np.vstack([np.interp(grid, x, v) for _, x, v in curves])
    return grid, rows


def _cmd_register(args, config: PipelineConfig) -> int:
    from .plots import plot_curve_family

    curves = read_curves_dir(args.curves)
    grid, rows = _common_grid(curves, config.grid_step)
    reg = LandmarkRegistration(
        eps_stop=config.eps_stop,
        n_landmarks=None if config.n_landmarks < 0 else config.n_landmarks,
        group_gap=config.group_gap,
        window=config.warp_window,
        min_secant=config.min_secant,
    ).fit(rows, grid=grid)

    outputs = []
    for (name, _, _), registered in zip(curves, reg.registered_):
        out_name = f"registered_{name}"
        write_curve(_out_path(config, out_name), grid, registered)
        outputs.append(out_name)
    write_curve(_out_path(config, "mean_curve.csv"), grid, reg.mean_)
    plot_curve_family(
        _out_path(config, "registered.svg"),
        grid,
        reg.registered_,
        mean=reg.mean_,
        title="registered curves",
    )
    write_json(
        _out_path(config, "registration.json"),
        {
            "curves": [name for name, _, _ in curves],
            "registered": outputs,
            "landmarks": reg.landmarks_.tolist(),
            "filled": reg.filled_.tolist(),
            "reference": reg.reference_.tolist(),
            "windows": [w.window for w in reg.warps_],
            "degraded": [w.degraded for w in reg.warps_],
        },
    )
    return 0


def _cmd_boxplot(args, config: PipelineConfig) -> int:
    from .plots import plot_functional_boxplot

    curves = read_curves_dir(args.curves)
    grid, rows = _common_grid(curves, config.grid_step)
    box = functional_boxplot(grid, rows, fractions=config.fractions())
    stations = pointwise_boxplots(grid, rows, step=config.station_step)
    names = [name for name, _, _ in curves]
    write_json(
        _out_path(config, "boxplot.json"),
        {
            "curves": names,
            "depths": box.depths.tolist(),
            "order": box.order.tolist(),
            "median_index": box.median_index,
            "median_curve": names[box.median_index],
            "outliers": box.outliers.tolist(),
            "outlier_curves": [names[i] for i in box.outliers],
            "regions": {
                str(frac): {"lower": lo.tolist(), "upper": hi.tolist()}
                for frac, (lo, hi) in box.regions.items()
            },
            "fences": {
                "lower": box.fence_lower.tolist(),
                "upper": box.fence_upper.tolist(),
            },
            "whiskers": {
                "lower": box.whisker_lower.tolist(),
                "upper": box.whisker_upper.tolist(),
            },
            "stations": {
                "x": stations.stations.tolist(),
                "min": stations.minimum.tolist(),
                "q1": stations.q1.tolist(),
                "median": stations.median.tolist(),
                "q3": stations.q3.tolist(),
                "max": stations.maximum.tolist(),
                "v85": stations.v85.tolist(),
            },
        },
    )
    plot_functional_boxplot(_out_path(config, "boxplot.svg"), box, curves=rows)
    return 0


def _cmd_simulate(args, config: PipelineConfig) -> int:
    functions = tuple(sorted(TEST_FUNCTIONS)) if args.function == "all" else (args.function,)
    sim = SimulationConfig(
        functions=functions,
        n_runs=config.n_runs,
        seed=config.seed,
        sigma_x=config.sigma_x,
        sigma_v=config.sigma_v,
        order=config.order,
        criterion=config.criterion,
    )
    reports = run_study(sim)
    payload = {
        "config": {
            "functions": list(functions),
            "n_runs": sim.n_runs,
            "seed": sim.seed,
            "sigma_x": sim.sigma_x,
            "sigma_v": sim.sigma_v,
            "order": sim.order,
            "criterion": sim.criterion,
        },
        "reports": [r.as_dict() for r in reports],
    }
    write_json(_out_path(config, "mise_report.json"), payload)
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args)
        return args.handler(args, config)
    except Exception as exc:  # one machine-readable line, nonzero exit
        line = {"error": str(exc), "type": type(exc).__name__}
        if isinstance(exc, PipelineStageError):
            line["stage"] = exc.stage
        print(json.dumps(line, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
