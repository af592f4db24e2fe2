"""Box-constrained quasi-Newton solver and the two greedy window drivers.

The inner solver normalizes every decision variable to [0, 1] via its bounds,
estimates gradients with 2-point finite differences, and delegates the
quasi-Newton iteration to L-BFGS-B.  The drivers sweep a window of segments
(or hatch lines) along the path: solve the local subproblem, copy the
candidate values forward, freeze the leading entries, advance, and finally
rescore the frozen decision with the exact global objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .objective import (
    GlobalObjective,
    ObjectiveSpec,
    Window,
    WindowContext,
    global_objective,
)
from .scanpath import ScanPath, hatch_line_maps
from .thermal import BeamParameters, MaterialParams

log = logging.getLogger("pbfopt.optimize")


@dataclass(frozen=True)
class SolverOptions:
    """Inner-solver controls; the gradient step applies to normalized variables.

    The generous iteration budget matters: under-converged window solves leave
    erratic bang-bang parameters in the masked corners of hatch lines.
    """

    fd_step: float = 1e-6
    max_iterations: int = 120
    tolerance: float = 1e-6  # relative objective decrease
    gradient_tolerance: float = 1e-8
    history_size: int = 10  # curvature pairs kept by the quasi-Newton update

    def __post_init__(self):
        for name in ("fd_step", "max_iterations", "tolerance", "gradient_tolerance", "history_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveResult:
    x: np.ndarray
    fun: float
    initial_fun: float
    n_iterations: int
    n_evaluations: int
    aborted: bool = False
    message: str = ""


class _AbortSolve(Exception):
    pass


class _Evaluator:
    """Objective wrapper on normalized coordinates with best-iterate tracking."""

    def __init__(self, fun, lower, span, free):
        self._fun = fun
        self._lower = lower
        self._span = span
        self._free = free
        self.n_evaluations = 0
        self.best_x = None
        self.best_f = np.inf
        self.failure = None
        self._cache = (None, None)

    def denormalize(self, xn: np.ndarray) -> np.ndarray:
        return self._lower + np.clip(xn, 0.0, 1.0) * self._span

    def __call__(self, xn: np.ndarray) -> float:
        key = xn.tobytes()
        if self._cache[0] == key:
            return self._cache[1]
        try:
            f = float(self._fun(self.denormalize(xn)))
        except Exception as exc:  # noqa: BLE001 - reported via SolveResult
            self.failure = exc
            raise _AbortSolve from exc
        if not np.isfinite(f):
            self.failure = ValueError(f"non-finite objective value {f}")
            raise _AbortSolve from self.failure
        self.n_evaluations += 1
        if f < self.best_f:
            self.best_f = f
            self.best_x = xn.copy()
        self._cache = (key, f)
        return f


def solve_box_qn(fun, x0, lower, upper, options: SolverOptions | None = None) -> SolveResult:
    """Minimize fun over the box [lower, upper] starting inside it.

    Never returns a point worse than the start; on an objective failure the
    best iterate seen so far is returned with ``aborted`` set.
    """
    options = options or SolverOptions()
    x0 = np.asarray(x0, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(x0 < lower - 1e-12) or np.any(x0 > upper + 1e-12):
        raise ValueError("start point violates the bounds")
    span = upper - lower
    free = span > 0.0
    safe_span = np.where(free, span, 1.0)
    xn0 = np.clip(np.where(free, (x0 - lower) / safe_span, 0.0), 0.0, 1.0)

    evaluator = _Evaluator(fun, lower, np.where(free, span, 0.0), free)
    h = options.fd_step

    def grad(xn):
        f0 = evaluator(xn)
        g = np.zeros_like(xn)
        for i in np.flatnonzero(free):
            step = np.zeros_like(xn)
            if xn[i] + h <= 1.0:
                step[i] = h
                g[i] = (evaluator(xn + step) - f0) / h
            else:  # at the upper bound: difference into the box
                step[i] = -h
                g[i] = (f0 - evaluator(xn + step)) / h
        return g

    try:
        f0 = evaluator(xn0)
    except _AbortSolve:
        raise ValueError("objective not evaluable at the start point") from evaluator.failure
    if not np.isfinite(f0):
        raise ValueError(f"objective is not finite at the start point: {f0}")

    aborted = False
    message = ""
    n_iter = 0
    try:
        res = minimize(
            evaluator,
            xn0,
            jac=grad,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0) if f else (xn0[i], xn0[i]) for i, f in enumerate(free)],
            options={
                "maxiter": options.max_iterations,
                "ftol": options.tolerance,
                "gtol": options.gradient_tolerance,
                "maxcor": options.history_size,
            },
        )
        n_iter = int(res.nit)
        message = str(res.message)
    except _AbortSolve:
        aborted = True
        message = f"objective evaluation failed: {evaluator.failure}"
        log.warning("inner solve aborted: %s", evaluator.failure)

    return SolveResult(
        x=evaluator.denormalize(evaluator.best_x),
        fun=evaluator.best_f,
        initial_fun=f0,
        n_iterations=n_iter,
        n_evaluations=evaluator.n_evaluations,
        aborted=aborted,
        message=message,
    )


# -- decision bounds and schedules -------------------------------------------


@dataclass(frozen=True)
class DecisionBounds:
    """Elementwise box for per-segment (spot size, speed) pairs, SI units."""

    spot_size: tuple[float, float]
    speed: tuple[float, float]

    def __post_init__(self):
        for lo, hi in (self.spot_size, self.speed):
            if not 0.0 < lo <= hi:
                raise ValueError("bounds must satisfy 0 < lower <= upper")

    def window_arrays(self, m: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.concatenate([np.full(m, self.spot_size[0]), np.full(m, self.speed[0])])
        hi = np.concatenate([np.full(m, self.spot_size[1]), np.full(m, self.speed[1])])
        return lo, hi

    def contains(self, beam: BeamParameters) -> bool:
        return bool(
            np.all(beam.spot_size >= self.spot_size[0])
            and np.all(beam.spot_size <= self.spot_size[1])
            and np.all(beam.speed >= self.speed[0])
            and np.all(beam.speed <= self.speed[1])
        )


@dataclass(frozen=True)
class WindowSchedule:
    """Window extent q(p) and freeze count r(p), in segments or hatch lines.

    q_of(p) is the index of the last window member for a window starting at
    p; the drivers clamp it to the path (r likewise to the window size).
    """

    q_of: object
    r_of: object
    unit: str = "segments"

    @staticmethod
    def fixed(window_size: int, freeze_count: int = 1, unit: str = "segments") -> "WindowSchedule":
        if window_size < 1 or not 1 <= freeze_count <= window_size:
            raise ValueError("need window_size >= 1 and 1 <= freeze_count <= window_size")
        return WindowSchedule(
            q_of=lambda p: p + window_size - 1,
            r_of=lambda p: freeze_count,
            unit=unit,
        )

    def clamped(self, p: int, n: int) -> tuple[int, int]:
        q = min(int(self.q_of(p)), n - 1)
        if q < p:
            raise ValueError(f"schedule gave window end {q} before start {p}")
        r = max(1, min(int(self.r_of(p)), q - p + 1))
        return q, r


# -- greedy drivers -----------------------------------------------------------


@dataclass
class WindowTrace:
    p: int
    q: int
    r: int
    objective_before: float
    objective_after: float
    n_iterations: int
    n_evaluations: int
    aborted: bool


@dataclass
class GreedyResult:
    beam: BeamParameters
    objective_initial: GlobalObjective | None
    objective_final: GlobalObjective
    windows: list
    coefficients: np.ndarray | None = None

    @property
    def J_init(self) -> float | None:
        return None if self.objective_initial is None else self.objective_initial.total

    @property
    def J_opt(self) -> float:
        return self.objective_final.total


@dataclass
class GreedyProblem:
    """Everything the drivers need besides the schedule and the start point."""

    material: MaterialParams
    path: ScanPath
    spec: ObjectiveSpec
    bounds: DecisionBounds
    solver: SolverOptions = field(default_factory=SolverOptions)
    jump_dwell: float = 0.0
    history_mode: str = "interp"
    threads: int = 1

    def __post_init__(self):
        self._secondary = self.spec.secondary_for(self.path)

    def make_context(self, beam, window, freeze_segments=None, decision_map=None) -> WindowContext:
        span = float(
            np.sum(self.path.length[window.p : window.q + 1]) / self.bounds.speed[0]
        )
        return WindowContext(
            self.material,
            self.path,
            self._secondary,
            self.spec,
            beam,
            window,
            freeze_segments=freeze_segments,
            max_window_span=span,
            history_mode=self.history_mode,
            jump_dwell=self.jump_dwell,
            threads=self.threads,
            decision_map=decision_map,
        )

    def evaluate(self, beam: BeamParameters) -> GlobalObjective:
        return global_objective(
            self.material,
            beam,
            self.path,
            self.spec,
            jump_dwell=self.jump_dwell,
            threads=self.threads,
        )


def greedy_segmentwise(
    problem: GreedyProblem,
    schedule: WindowSchedule,
    beam0: BeamParameters,
    *,
    compute_initial: bool = True,
    on_window=None,
) -> GreedyResult:
    """Sweep segment windows along the path, freezing r pairs per iteration."""
    path = problem.path
    n = path.n_segments
    if schedule.unit != "segments":
        raise ValueError("segment-wise driver needs a segment-unit schedule")
    if beam0.n_segments != n:
        raise ValueError("start decision does not match the path")
    if not problem.bounds.contains(beam0):
        raise ValueError("start decision violates the bounds")

    beam = beam0
    initial = problem.evaluate(beam0) if compute_initial else None
    traces: list[WindowTrace] = []
    frozen_sigma = np.full(n, np.nan)
    frozen_speed = np.full(n, np.nan)

    p = 0
    q, r = schedule.clamped(p, n)
    while p < n:
        window = Window(p, q, r)
        ctx = problem.make_context(beam, window)
        m = window.size
        x0 = np.concatenate([beam.spot_size[p : q + 1], beam.speed[p : q + 1]])
        lo, hi = problem.bounds.window_arrays(m)
        res = solve_box_qn(ctx.objective, x0, lo, hi, problem.solver)
        if res.aborted:
            log.warning("window [%d, %d]: solver aborted, freezing best candidate", p, q)
        if res.fun > 10.0 * max(res.initial_fun, 1e-300):
            log.warning(
                "window [%d, %d]: local objective grew from %.3g to %.3g",
                p, q, res.initial_fun, res.fun,
            )

        sigma = beam.spot_size.copy()
        speed = beam.speed.copy()
        sigma[p : q + 1] = res.x[:m]
        speed[p : q + 1] = res.x[m:]
        sigma[q + 1 :] = res.x[m - 1]
        speed[q + 1 :] = res.x[-1]
        beam = BeamParameters(sigma, speed)
        frozen_sigma[p : p + r] = sigma[p : p + r]
        frozen_speed[p : p + r] = speed[p : p + r]

        traces.append(
            WindowTrace(p, q, r, res.initial_fun, res.fun, res.n_iterations, res.n_evaluations, res.aborted)
        )
        log.info(
            "window [%d, %d] r=%d: %.4g -> %.4g (%d iterations)",
            p, q, r, res.initial_fun, res.fun, res.n_iterations,
        )
        if on_window is not None:
            on_window(traces[-1], beam)
        p += r
        if p >= n:
            break
        q, r = schedule.clamped(p, n)

    done = ~np.isnan(frozen_sigma)
    if not (
        np.array_equal(beam.spot_size[done], frozen_sigma[done])
        and np.array_equal(beam.speed[done], frozen_speed[done])
    ):
        raise AssertionError("frozen parameters were modified after freezing")
    return GreedyResult(
        beam=beam,
        objective_initial=initial,
        objective_final=problem.evaluate(beam),
        windows=traces,
    )


# -- hatch-line parameter functions -------------------------------------------


@dataclass(frozen=True)
class ParameterFunctionModel:
    """Per-line profile C1 (1 + C2 / (1 + C3 * g^C4)) of line-local distance g.

    One coefficient quadruple per beam parameter per hatch line; evaluated
    values are clamped into the physical bounds.
    """

    bounds: DecisionBounds
    gain_bounds: tuple[float, float] = (0.0, 20.0)  # C2
    steepness_bounds: tuple[float, float] = (0.0, 1e7)  # C3 (distance in m)
    shape_bounds: tuple[float, float] = (0.5, 4.0)  # C4

    def line_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array(
            [
                self.bounds.spot_size[0], self.gain_bounds[0],
                self.steepness_bounds[0], self.shape_bounds[0],
                self.bounds.speed[0], self.gain_bounds[0],
                self.steepness_bounds[0], self.shape_bounds[0],
            ]
        )
        hi = np.array(
            [
                self.bounds.spot_size[1], self.gain_bounds[1],
                self.steepness_bounds[1], self.shape_bounds[1],
                self.bounds.speed[1], self.gain_bounds[1],
                self.steepness_bounds[1], self.shape_bounds[1],
            ]
        )
        return lo, hi

    def window_arrays(self, n_lines: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.line_arrays()
        return np.tile(lo, n_lines), np.tile(hi, n_lines)

    def initial_coefficients(
        self,
        path: ScanPath,
        spot_size0: float,
        speed0: float,
        gain: float = 0.5,
        shape: float = 1.0,
    ) -> np.ndarray:
        """Start coefficients whose profile least-squares fits a constant guess.

        The transition point sits at half the line length so that both the
        steepness and shape coefficients have live gradients from the start.
        """
        first, line_of = hatch_line_maps(path)
        coeffs = np.empty((path.n_lines, 8))
        for line in range(path.n_lines):
            lo, hi = path.line_distance_bounds(line)
            g = path.distance_start[line_of == line] - lo
            steep = 2.0 / (hi - lo) ** shape
            phi = 1.0 + gain / (1.0 + steep * g**shape)
            scale = float(phi.sum() / (phi @ phi))
            c1_sigma = np.clip(spot_size0 * scale, *self.bounds.spot_size)
            c1_speed = np.clip(speed0 * scale, *self.bounds.speed)
            coeffs[line] = [c1_sigma, gain, steep, shape, c1_speed, gain, steep, shape]
        return coeffs


def eval_parameter_functions(
    coefficients: np.ndarray, path: ScanPath, bounds: DecisionBounds
) -> BeamParameters:
    """Per-segment beam parameters induced by per-line profile coefficients."""
    coeffs = np.asarray(coefficients, dtype=float)
    if coeffs.shape != (path.n_lines, 8):
        raise ValueError(f"expected coefficients of shape ({path.n_lines}, 8)")
    first, line_of = hatch_line_maps(path)
    g = path.distance_start - path.distance_start[first[line_of]]
    c = coeffs[line_of]
    sigma = c[:, 0] * (1.0 + c[:, 1] / (1.0 + c[:, 2] * g ** c[:, 3]))
    speed = c[:, 4] * (1.0 + c[:, 5] / (1.0 + c[:, 6] * g ** c[:, 7]))
    return BeamParameters(
        np.clip(sigma, *bounds.spot_size), np.clip(speed, *bounds.speed)
    )


def greedy_linewise(
    problem: GreedyProblem,
    schedule: WindowSchedule,
    model: ParameterFunctionModel,
    coefficients0: np.ndarray,
    *,
    compute_initial: bool = True,
    on_window=None,
) -> GreedyResult:
    """Sweep hatch-line windows, optimizing profile coefficients per line."""
    path = problem.path
    if schedule.unit != "hatch_lines":
        raise ValueError("line-wise driver needs a hatch-line-unit schedule")
    n_lines = path.n_lines
    n = path.n_segments
    first, _ = hatch_line_maps(path)
    seg_of_line = np.append(first, n)  # line index -> first segment, sentinel at end

    coeffs = np.array(coefficients0, dtype=float)
    lo1, hi1 = model.line_arrays()
    if coeffs.shape != (n_lines, 8):
        raise ValueError(f"expected coefficients of shape ({n_lines}, 8)")
    if np.any(coeffs < lo1) or np.any(coeffs > hi1):
        raise ValueError("start coefficients violate the model bounds")

    beam = eval_parameter_functions(coeffs, path, problem.bounds)
    initial = problem.evaluate(beam) if compute_initial else None
    traces: list[WindowTrace] = []

    p = 0
    q, r = schedule.clamped(p, n_lines)
    while p < n_lines:
        seg_lo = int(seg_of_line[p])
        seg_hi = int(seg_of_line[q + 1]) - 1
        freeze_segments = int(seg_of_line[p + r]) - seg_lo
        m_lines = q - p + 1
        window = Window(seg_lo, seg_hi, min(freeze_segments, seg_hi - seg_lo + 1))
        seg_lines = np.concatenate(
            [np.full(seg_of_line[l + 1] - seg_of_line[l], l - p) for l in range(p, q + 1)]
        )
        g_local = path.distance_start[seg_lo : seg_hi + 1] - path.distance_start[
            seg_of_line[np.arange(p, q + 1)][seg_lines]
        ]

        def decision_map(flat, _lines=seg_lines, _g=g_local, _m=m_lines):
            c = np.asarray(flat, dtype=float).reshape(_m, 8)[_lines]
            sigma = c[:, 0] * (1.0 + c[:, 1] / (1.0 + c[:, 2] * _g ** c[:, 3]))
            speed = c[:, 4] * (1.0 + c[:, 5] / (1.0 + c[:, 6] * _g ** c[:, 7]))
            return (
                np.clip(sigma, *problem.bounds.spot_size),
                np.clip(speed, *problem.bounds.speed),
            )

        ctx = problem.make_context(
            beam, window, freeze_segments=freeze_segments, decision_map=decision_map
        )
        x0 = coeffs[p : q + 1].ravel()
        lo, hi = model.window_arrays(m_lines)
        res = solve_box_qn(ctx.objective, x0, lo, hi, problem.solver)
        if res.aborted:
            log.warning("line window [%d, %d]: solver aborted, freezing best candidate", p, q)

        cand = res.x.reshape(m_lines, 8)
        coeffs[p : q + 1] = cand
        coeffs[q + 1 :] = cand[-1]
        beam = eval_parameter_functions(coeffs, path, problem.bounds)

        traces.append(
            WindowTrace(p, q, r, res.initial_fun, res.fun, res.n_iterations, res.n_evaluations, res.aborted)
        )
        log.info(
            "line window [%d, %d] r=%d: %.4g -> %.4g (%d iterations)",
            p, q, r, res.initial_fun, res.fun, res.n_iterations,
        )
        if on_window is not None:
            on_window(traces[-1], beam)
        p += r
        if p >= n_lines:
            break
        q, r = schedule.clamped(p, n_lines)

    return GreedyResult(
        beam=beam,
        objective_initial=initial,
        objective_final=problem.evaluate(beam),
        windows=traces,
        coefficients=coeffs,
    )


def extend_solution(
    beam: BeamParameters,
    src_path: ScanPath,
    dst_path: ScanPath,
    rule: str = "copy_last_line",
) -> BeamParameters:
    """Extend a prefix solution onto a longer path by repeating its last line.

    The source path must be a line-aligned prefix of the destination.  Lines
    with equal segment counts copy by within-line index; otherwise values are
    resampled piecewise-constant by within-line distance fraction.
    """
    if rule != "copy_last_line":
        raise ValueError(f"unknown extension rule {rule!r}")
    if beam.n_segments != src_path.n_segments:
        raise ValueError("beam parameters do not match the source path")
    n_src_lines = src_path.n_lines
    if n_src_lines > dst_path.n_lines:
        raise ValueError("destination has fewer hatch lines than the source")
    src_first = np.append(hatch_line_maps(src_path)[0], src_path.n_segments)
    dst_first = np.append(hatch_line_maps(dst_path)[0], dst_path.n_segments)
    if not np.array_equal(src_first, dst_first[: n_src_lines + 1]):
        raise ValueError("source is not a line-aligned prefix of the destination")

    sigma = np.empty(dst_path.n_segments)
    speed = np.empty(dst_path.n_segments)
    sigma[: src_path.n_segments] = beam.spot_size
    speed[: src_path.n_segments] = beam.speed

    last = n_src_lines - 1
    src_lo, src_hi = src_path.line_distance_bounds(last)
    src_segs = np.arange(src_first[last], src_first[last + 1])
    src_frac = (src_path.distance_start[src_segs] - src_lo) / (src_hi - src_lo)
    for line in range(n_src_lines, dst_path.n_lines):
        dst_segs = np.arange(dst_first[line], dst_first[line + 1])
        if len(dst_segs) == len(src_segs):
            pick = src_segs
        else:
            lo, hi = dst_path.line_distance_bounds(line)
            frac = (dst_path.distance_start[dst_segs] - lo) / (hi - lo)
            pick = src_segs[np.searchsorted(src_frac, frac + 1e-12, side="right") - 1]
        sigma[dst_segs] = beam.spot_size[pick]
        speed[dst_segs] = beam.speed[pick]
    return BeamParameters(sigma, speed)
