"""Scenario files: material, path, objective and algorithm configuration.

Scenario files are JSON with millimeter/mm-per-second units at the boundary
(matching how machine settings are usually written); everything is converted
to SI once at load.  Three builtin scenarios ship with the package:
``example1`` (segment-wise snake), ``example2`` (annulus quadrant with
prefix optimization + extension) and ``example3`` (line-wise snake with
parameter-function profiles).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .objective import ObjectiveSpec
from .optimize import (
    DecisionBounds,
    ParameterFunctionModel,
    SolverOptions,
    WindowSchedule,
)
from .scanpath import ScanPath, path_from_spec
from .thermal import BeamParameters, MaterialParams

BUILTIN_NAMES = ("example1", "example2", "example3")


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


def _get(d: dict, key: str, kind=None):
    if key not in d:
        raise ConfigError(f"missing configuration key {key!r}")
    val = d[key]
    if kind is not None:
        try:
            val = kind(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r}") from exc
    return val


@dataclass
class Scenario:
    """Parsed scenario with SI quantities plus the canonical raw dict."""

    name: str
    material: MaterialParams
    path: ScanPath
    spec: ObjectiveSpec
    bounds: DecisionBounds
    initial_spot_size: float  # m
    initial_speed: float  # m/s
    algorithm: str  # "segmentwise" | "linewise"
    window_size: int
    freeze_count: int
    solver: SolverOptions
    optimize_lines: int | None
    extend_rule: str
    calibrate_smoothing: bool
    jump_dwell: float
    outputs: dict
    raw: dict = field(repr=False, default_factory=dict)

    def initial_beam(self, path: ScanPath | None = None) -> BeamParameters:
        p = path if path is not None else self.path
        return BeamParameters.constant(p.n_segments, self.initial_spot_size, self.initial_speed)

    def schedule(self) -> WindowSchedule:
        unit = "hatch_lines" if self.algorithm == "linewise" else "segments"
        return WindowSchedule.fixed(self.window_size, self.freeze_count, unit)

    def parameter_model(self) -> ParameterFunctionModel:
        ansatz = self.raw.get("algorithm", {}).get("ansatz", {})
        return ParameterFunctionModel(
            bounds=self.bounds,
            gain_bounds=tuple(ansatz.get("gain_bounds", (0.0, 20.0))),
            steepness_bounds=tuple(ansatz.get("steepness_bounds_per_m", (0.0, 1e7))),
            shape_bounds=tuple(ansatz.get("shape_bounds", (0.5, 4.0))),
        )

    def prefix_path(self) -> ScanPath:
        """Sub-path actually optimized (first ``optimize_lines`` hatch lines)."""
        if self.optimize_lines is None or self.optimize_lines >= self.path.n_lines:
            return self.path
        stop = self.path.line_first_segment(self.optimize_lines)
        endpoints = np.stack([self.path.start[:stop, :2], self.path.end[:stop, :2]], axis=1)
        return ScanPath(endpoints)


def scenario_from_dict(data: dict, name: str = "") -> Scenario:
    try:
        mat = data["material"]
        material = MaterialParams(
            conductivity=_get(mat, "conductivity_W_mK", float),
            diffusivity=_get(mat, "diffusivity_m2_s", float),
            initial_temperature=_get(mat, "initial_temperature_K", float),
            power=_get(mat, "power_W", float),
        )
        path = path_from_spec(_get(data, "path"))
        obj = _get(data, "objective")
        spec = ObjectiveSpec(
            melt_temperature=_get(obj, "melt_temperature_K", float),
            surface_temperature=_get(obj, "surface_temperature_K", float),
            weight_melt=_get(obj, "weight_melt", float),
            weight_surface=_get(obj, "weight_surface", float),
            mask_margin=_get(obj, "mask_margin_mm", float) * 1e-3,
            sample_spacing=_get(obj, "sample_spacing_mm", float) * 1e-3,
            secondary_width=_get(obj, "secondary_width_mm", float) * 1e-3,
            secondary_depth=_get(obj, "secondary_depth_mm", float) * 1e-3,
            secondary_mode=obj.get("secondary_mode", "global_offset"),
            smoothing_scale=float(obj.get("smoothing_scale_per_K", 0.1)),
        )
        if not spec.melt_temperature > material.initial_temperature:
            raise ConfigError("melt reference must exceed the initial temperature")
        bounds_cfg = _get(data, "bounds")
        sig_lo, sig_hi = _get(bounds_cfg, "spot_size_mm")
        v_lo, v_hi = _get(bounds_cfg, "speed_mm_s")
        bounds = DecisionBounds(
            spot_size=(float(sig_lo) * 1e-3, float(sig_hi) * 1e-3),
            speed=(float(v_lo) * 1e-3, float(v_hi) * 1e-3),
        )
        init = _get(data, "initial_guess")
        algo = data.get("algorithm", {})
        window = algo.get("window", {})
        solver_cfg = algo.get("solver", {})
        opt_lines = algo.get("optimize_lines")
        scenario = Scenario(
            name=name or data.get("name", "scenario"),
            material=material,
            path=path,
            spec=spec,
            bounds=bounds,
            initial_spot_size=_get(init, "spot_size_mm", float) * 1e-3,
            initial_speed=_get(init, "speed_mm_s", float) * 1e-3,
            algorithm=algo.get("kind", "segmentwise"),
            window_size=int(window.get("q_size", 5)),
            freeze_count=int(window.get("r", 1)),
            solver=SolverOptions(
                fd_step=float(solver_cfg.get("fd_step", 1e-6)),
                max_iterations=int(solver_cfg.get("max_iter", 50)),
                tolerance=float(solver_cfg.get("tol", 1e-3)),
            ),
            optimize_lines=None if opt_lines is None else int(opt_lines),
            extend_rule=algo.get("extend_rule", "copy_last_line"),
            calibrate_smoothing=bool(obj.get("calibrate_smoothing", True)),
            jump_dwell=float(data.get("jump_dwell_s", 0.0)),
            outputs=data.get("outputs", {}),
            raw=data,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if scenario.algorithm not in ("segmentwise", "linewise"):
        raise ConfigError(f"unknown algorithm {scenario.algorithm!r}")
    if scenario.algorithm == "linewise" and scenario.optimize_lines is not None:
        raise ConfigError("prefix optimization is only supported segment-wise")
    if not scenario.bounds.contains(scenario.initial_beam()):
        raise ConfigError("initial guess violates the bounds")
    return scenario


def load_scenario(source) -> Scenario:
    """Load a scenario from a builtin name, a JSON file path, or a dict."""
    if isinstance(source, dict):
        return scenario_from_dict(source)
    source = str(source)
    if source in BUILTIN_NAMES:
        text = resources.files("pbfopt.scenarios").joinpath(f"{source}.json").read_text()
        return scenario_from_dict(json.loads(text), name=source)
    p = Path(source)
    if not p.exists():
        raise ConfigError(f"scenario {source!r} is neither a builtin name nor a file")
    with open(p) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {source}: {exc}") from exc
    return scenario_from_dict(data, name=data.get("name", p.stem))


def save_scenario(scenario: Scenario, filename) -> None:
    with open(filename, "w") as fh:
        json.dump(scenario.raw, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- decision tables ----------------------------------------------------------

SOLUTION_HEADER = "segment,gamma_start_mm,sigma_mm,speed_mm_s"


def write_solution_csv(filename, path: ScanPath, beam: BeamParameters) -> None:
    """Per-segment decision table (1-based segment numbers, mm units)."""
    with open(filename, "w") as fh:
        fh.write(SOLUTION_HEADER + "\n")
        for k in range(path.n_segments):
            fh.write(
                f"{k + 1},{path.distance_start[k] * 1e3:.6f},"
                f"{beam.spot_size[k] * 1e3:.9g},{beam.speed[k] * 1e3:.9g}\n"
            )


def read_solution_csv(filename, path: ScanPath) -> BeamParameters:
    rows = np.loadtxt(filename, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[0] != path.n_segments or rows.shape[1] != 4:
        raise ConfigError(
            f"decision table has {rows.shape[0]} rows, path has {path.n_segments} segments"
        )
    order = np.argsort(rows[:, 0])
    return BeamParameters(rows[order, 2] * 1e-3, rows[order, 3] * 1e-3)
