"""Command-line front end: simulate, optimize, evaluate.

All file outputs are CSV/JSON with millimeter units at the boundary; the
objective value J and its parts are reported in K^2 m (squared Kelvin times
path meters).  Runs are deterministic for a fixed thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import thermal
from .objective import global_objective, sample_segments
from .optimize import (
    GreedyProblem,
    extend_solution,
    greedy_linewise,
    greedy_segmentwise,
)
from .scanpath import compute_timing
from .scenario import (
    ConfigError,
    Scenario,
    load_scenario,
    read_solution_csv,
    write_solution_csv,
)
from .thermal import calibrate_smoothing, write_field_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

log = logging.getLogger("pbfopt.cli")


def _positive_smoothing(scenario: Scenario) -> float:
    """Scenario smoothing scale, calibrated on the initial guess if requested."""
    if not scenario.calibrate_smoothing:
        return scenario.spec.smoothing_scale
    beam = scenario.initial_beam()
    timing = compute_timing(scenario.path, beam.speed, scenario.jump_dwell)
    return calibrate_smoothing(
        scenario.material, beam, scenario.path, timing, initial=scenario.spec.smoothing_scale
    )


def _load_beam(scenario: Scenario, params_file):
    if params_file is None:
        return scenario.initial_beam()
    return read_solution_csv(params_file, scenario.path)


def _bbox(path):
    pts = np.vstack([path.start[:, :2], path.end[:, :2]])
    return pts.min(axis=0), pts.max(axis=0)


def _surface_grid(path, spacing, pad):
    lo, hi = _bbox(path)
    xs = np.arange(lo[0] - pad, hi[0] + pad + spacing / 2, spacing)
    ys = np.arange(lo[1] - pad, hi[1] + pad + spacing / 2, spacing)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])


def _cross_section_grid(path, plane, value, spacing, depth, pad):
    lo, hi = _bbox(path)
    zs = np.arange(-depth, spacing / 2, spacing)
    if plane == "x":
        ys = np.arange(lo[1] - pad, hi[1] + pad + spacing / 2, spacing)
        Y, Z = np.meshgrid(ys, zs, indexing="ij")
        return np.column_stack([np.full(Y.size, value), Y.ravel(), Z.ravel()])
    if plane == "y":
        xs = np.arange(lo[0] - pad, hi[0] + pad + spacing / 2, spacing)
        X, Z = np.meshgrid(xs, zs, indexing="ij")
        return np.column_stack([X.ravel(), np.full(X.size, value), Z.ravel()])
    raise ConfigError(f"unknown cross-section plane {plane!r}")


def _write_profiles(out_dir, scenario, result):
    sampling = result.sampling
    for fname, temps in (
        ("profile_secondary.csv", result.max_secondary),
        ("profile_beam.csv", result.max_beam),
    ):
        with open(out_dir / fname, "w") as fh:
            fh.write("gamma_mm,max_temp_K,edge_mask\n")
            for g, u, a in zip(sampling.gamma, temps, sampling.alpha):
                fh.write(f"{g * 1e3:.6f},{u:.4f},{int(a)}\n")


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    beam = _load_beam(scenario, args.params)
    timing = compute_timing(scenario.path, beam.speed, scenario.jump_dwell)

    result = global_objective(
        scenario.material,
        beam,
        scenario.path,
        scenario.spec,
        jump_dwell=scenario.jump_dwell,
        threads=args.threads,
    )
    _write_profiles(out_dir, scenario, result)
    written = ["profile_secondary.csv", "profile_beam.csv"]

    window = (0, scenario.path.n_segments - 1)
    grid_cfg = scenario.outputs.get("surface_max_grid")
    if grid_cfg:
        pts = _surface_grid(
            scenario.path,
            float(grid_cfg.get("spacing_mm", 0.05)) * 1e-3,
            float(grid_cfg.get("pad_mm", 0.5)) * 1e-3,
        )
        vals = thermal.field_on_grid(
            pts, ("max", window), scenario.material, beam, scenario.path, timing,
            threads=args.threads,
        )
        write_field_csv(out_dir / "surface_max.csv", pts, vals)
        written.append("surface_max.csv")
    cs_cfg = scenario.outputs.get("cross_section")
    if cs_cfg:
        pts = _cross_section_grid(
            scenario.path,
            cs_cfg.get("plane", "x"),
            float(cs_cfg.get("value_mm", 0.0)) * 1e-3,
            float(cs_cfg.get("spacing_mm", 0.02)) * 1e-3,
            float(cs_cfg.get("depth_mm", 0.4)) * 1e-3,
            float(cs_cfg.get("pad_mm", 0.4)) * 1e-3,
        )
        vals = thermal.field_on_grid(
            pts, ("max", window), scenario.material, beam, scenario.path, timing,
            threads=args.threads,
        )
        write_field_csv(out_dir / "cross_section.csv", pts, vals)
        written.append("cross_section.csv")
    print(json.dumps({"written": written, "J": result.total}, indent=2))
    return EXIT_OK


def cmd_optimize(args) -> int:
    scenario = load_scenario(args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    scale = _positive_smoothing(scenario)
    spec = scenario.spec.with_smoothing(scale)
    traces = []
    started = time.perf_counter()

    def on_window(trace, _beam):
        traces.append(trace)

    try:
        if scenario.algorithm == "segmentwise":
            work_path = scenario.prefix_path()
            problem = GreedyProblem(
                material=scenario.material,
                path=work_path,
                spec=spec,
                bounds=scenario.bounds,
                solver=scenario.solver,
                jump_dwell=scenario.jump_dwell,
                threads=args.threads,
            )
            run = greedy_segmentwise(
                problem,
                scenario.schedule(),
                scenario.initial_beam(work_path),
                compute_initial=False,
                on_window=on_window,
            )
            beam = run.beam
            coeffs = None
            if work_path.n_segments != scenario.path.n_segments:
                beam = extend_solution(beam, work_path, scenario.path, scenario.extend_rule)
        else:
            problem = GreedyProblem(
                material=scenario.material,
                path=scenario.path,
                spec=spec,
                bounds=scenario.bounds,
                solver=scenario.solver,
                jump_dwell=scenario.jump_dwell,
                threads=args.threads,
            )
            model = scenario.parameter_model()
            ansatz = scenario.raw.get("algorithm", {}).get("ansatz", {})
            coeffs0 = model.initial_coefficients(
                scenario.path,
                scenario.initial_spot_size,
                scenario.initial_speed,
                gain=float(ansatz.get("initial_gain", 0.5)),
                shape=float(ansatz.get("initial_shape", 1.0)),
            )
            run = greedy_linewise(
                problem,
                scenario.schedule(),
                model,
                coeffs0,
                compute_initial=False,
                on_window=on_window,
            )
            beam = run.beam
            coeffs = run.coefficients
        initial = global_objective(
            scenario.material, scenario.initial_beam(), scenario.path, spec,
            jump_dwell=scenario.jump_dwell, threads=args.threads,
        )
        final = global_objective(
            scenario.material, beam, scenario.path, spec,
            jump_dwell=scenario.jump_dwell, threads=args.threads,
        )
    except Exception as exc:  # noqa: BLE001 - partial trace then solver exit code
        _write_windows_csv(out_dir / "windows.csv", traces)
        print(f"optimization aborted: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    write_solution_csv(out_dir / "solution.csv", scenario.path, beam)
    _write_windows_csv(out_dir / "windows.csv", traces)
    if coeffs is not None:
        np.savetxt(
            out_dir / "coefficients.csv",
            np.column_stack([np.arange(1, len(coeffs) + 1), coeffs]),
            delimiter=",",
            header="line,c1_sigma_m,c2_sigma,c3_sigma,c4_sigma,c1_speed_m_s,c2_speed,c3_speed,c4_speed",
            comments="",
        )
    summary = {
        "scenario": scenario.name,
        "algorithm": scenario.algorithm,
        "backend": thermal.backend_name(),
        "n_segments": scenario.path.n_segments,
        "n_lines": scenario.path.n_lines,
        "smoothing_scale_per_K": scale,
        "J_init_K2m": initial.total,
        "J_opt_K2m": final.total,
        "reduction_factor": initial.total / final.total if final.total > 0 else float("inf"),
        "runtime_s": time.perf_counter() - started,
        "n_windows": len(traces),
        "aborted_windows": sum(t.aborted for t in traces),
        "files": {"solution": "solution.csv", "windows": "windows.csv"},
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _write_windows_csv(filename, traces) -> None:
    with open(filename, "w") as fh:
        fh.write("p,q,r,J_before_K2m,J_after_K2m,inner_iterations,inner_evaluations,aborted\n")
        for t in traces:
            fh.write(
                f"{t.p + 1},{t.q + 1},{t.r},{t.objective_before:.9g},"
                f"{t.objective_after:.9g},{t.n_iterations},{t.n_evaluations},{int(t.aborted)}\n"
            )


def cmd_evaluate(args) -> int:
    scenario = load_scenario(args.scenario)
    beam = _load_beam(scenario, args.params)
    result = global_objective(
        scenario.material,
        beam,
        scenario.path,
        scenario.spec,
        jump_dwell=scenario.jump_dwell,
        threads=args.threads,
    )
    report = result.report()
    print(json.dumps(report, indent=2))
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pbfopt",
        description="Beam-parameter optimization for powder bed fusion melting",
    )
    parser.add_argument("--verbose", action="store_true", help="log window progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="builtin name or JSON file")
        p.add_argument("--threads", type=int, default=1, help="worker parallelism cap")
        p.add_argument(
            "--seedless",
            action="store_true",
            default=True,
            help="deterministic mode (default; no randomness is used anywhere)",
        )

    p_sim = sub.add_parser("simulate", help="write max-temperature fields and path profiles")
    common(p_sim)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--params", help="decision table CSV (default: initial guess)")
    p_sim.set_defaults(func=cmd_simulate)

    p_opt = sub.add_parser("optimize", help="run the greedy optimization")
    common(p_opt)
    p_opt.add_argument("--out", required=True, help="output directory")
    p_opt.set_defaults(func=cmd_optimize)

    p_eval = sub.add_parser("evaluate", help="score a decision table")
    common(p_eval)
    p_eval.add_argument("--params", help="decision table CSV (default: initial guess)")
    p_eval.add_argument("--out", help="optional output directory for report.json")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc.filename or ''}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
