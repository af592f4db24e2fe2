"""Tracking objectives on the beam path and the secondary path.

The scalar cost is a weighted sum of two squared-residual path integrals:
the maximum temperature should match the melt reference on the secondary
(width/depth) path and the surface reference on the beam path itself.  Path
integrals are discretized with a midpoint rule per segment; hatch-line ends
are excluded by a 0/1 edge mask, and windowed (local) objectives add a
per-segment weight that prioritizes the segments about to be frozen.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import thermal
from .scanpath import ScanPath, SecondaryPath, build_secondary_path, compute_timing
from .thermal import BeamParameters, MaterialParams, ThermalField


@dataclass(frozen=True)
class ObjectiveSpec:
    """References, weights, masking and discretization of the tracking cost."""

    melt_temperature: float  # K, tracked on the secondary path
    surface_temperature: float  # K, tracked on the beam path
    weight_melt: float
    weight_surface: float
    mask_margin: float  # m, masked length at each hatch-line end
    sample_spacing: float  # m, midpoint-rule target spacing
    secondary_width: float  # m
    secondary_depth: float  # m
    secondary_mode: str = "global_offset"
    smoothing_scale: float = 0.1  # 1/K, log-sum-exp scale during optimization
    refine_tolerance: float = 1e-3  # K, exact-max golden refinement
    discretization_tolerance: float = 0.02  # relative J change under h/2

    def __post_init__(self):
        if self.weight_melt < 0.0 or self.weight_surface < 0.0:
            raise ValueError("weights must be nonnegative")
        if self.weight_melt + self.weight_surface <= 0.0:
            raise ValueError("at least one weight must be positive")
        if not self.surface_temperature > self.melt_temperature:
            raise ValueError("surface reference must exceed melt reference")
        if self.sample_spacing <= 0.0:
            raise ValueError("sample spacing must be positive")
        if self.mask_margin < 0.0:
            raise ValueError("mask margin must be nonnegative")
        if self.smoothing_scale <= 0.0:
            raise ValueError("smoothing scale must be positive")

    def with_smoothing(self, scale: float) -> "ObjectiveSpec":
        return dataclasses.replace(self, smoothing_scale=scale)

    def secondary_for(self, path: ScanPath) -> SecondaryPath:
        return build_secondary_path(
            path, self.secondary_width, self.secondary_depth, self.secondary_mode
        )


@dataclass(frozen=True)
class Window:
    """Adjacent segments [p, q] with the leading freeze count r (0-based p, q)."""

    p: int
    q: int
    r: int = 1

    def __post_init__(self):
        if not 0 <= self.p <= self.q:
            raise ValueError(f"invalid window [{self.p}, {self.q}]")
        if not 1 <= self.r <= self.q - self.p + 1:
            raise ValueError(f"freeze count {self.r} outside window size")

    @property
    def size(self) -> int:
        return self.q - self.p + 1


def edge_mask(path: ScanPath, gamma, segments, margin: float) -> np.ndarray:
    """1 for samples at least ``margin`` inside their hatch line, else 0."""
    gamma = np.asarray(gamma, dtype=float)
    segments = np.asarray(segments, dtype=np.intp)
    lines = path._line_of[segments]
    bounds = np.array([path.line_distance_bounds(l) for l in range(path.n_lines)])
    dist = np.minimum(gamma - bounds[lines, 0], bounds[lines, 1] - gamma)
    return np.where(dist < margin, 0.0, 1.0)


def alpha_mask(path: ScanPath, segment: int, fraction: float, margin: float) -> float:
    """Edge mask for a single on-path sample."""
    gamma = path.scan_distance(segment, fraction)
    return float(edge_mask(path, [gamma], [segment], margin)[0])


def window_weights(path: ScanPath, window: Window) -> np.ndarray:
    """Per-segment freeze-priority weights for segments p..q.

    1 on the r leading segments, then decreasing quadratically with the
    remaining scan distance to the window end.
    """
    p, q, r = window.p, window.q, window.r
    g_start = path.distance_start
    g_end_q = g_start[q] + path.length[q]
    w = np.ones(window.size)
    for k in range(p + r, q + 1):
        w[k - p] = ((g_end_q - g_start[k]) / (g_end_q - g_start[p])) ** 2
    return w


def beta_weight(path: ScanPath, window: Window, segment: int) -> float:
    """Freeze-priority weight of one segment inside the window."""
    if not window.p <= segment <= window.q:
        raise ValueError(f"segment {segment} outside window [{window.p}, {window.q}]")
    return float(window_weights(path, window)[segment - window.p])


@dataclass(frozen=True)
class PathSampling:
    """Midpoint samples on both paths for a segment range.

    The same scan distance, weight, mask and owning segment apply to the
    beam-path sample and its secondary-path image.
    """

    beam_points: np.ndarray  # (n, 3)
    secondary_points: np.ndarray  # (n, 3)
    gamma: np.ndarray  # (n,)
    weights: np.ndarray  # (n,) quadrature weights, m
    alpha: np.ndarray  # (n,) 0/1 edge mask
    segment: np.ndarray  # (n,) owning segment

    @property
    def n_samples(self) -> int:
        return len(self.gamma)

    def stacked_points(self) -> np.ndarray:
        """Secondary samples followed by beam samples, for batched evaluation."""
        return np.vstack([self.secondary_points, self.beam_points])


def sample_segments(
    path: ScanPath,
    secondary: SecondaryPath,
    spec: ObjectiveSpec,
    p: int,
    q: int,
) -> PathSampling:
    pts, gammas, weights, owners = [], [], [], []
    for k in range(p, q + 1):
        n = max(1, math.ceil(path.length[k] / spec.sample_spacing))
        frac = (np.arange(n) + 0.5) / n
        pts.append(path.start[k][None, :] + frac[:, None] * (path.end[k] - path.start[k]))
        gammas.append(path.distance_start[k] + frac * path.length[k])
        weights.append(np.full(n, path.length[k] / n))
        owners.append(np.full(n, k, dtype=np.intp))
    beam_pts = np.vstack(pts)
    gamma = np.concatenate(gammas)
    owner = np.concatenate(owners)
    return PathSampling(
        beam_points=beam_pts,
        secondary_points=secondary.map_points(beam_pts, owner),
        gamma=gamma,
        weights=np.concatenate(weights),
        alpha=edge_mask(path, gamma, owner, spec.mask_margin),
        segment=owner,
    )


def tracking_cost(
    max_secondary: np.ndarray,
    max_beam: np.ndarray,
    sampling: PathSampling,
    spec: ObjectiveSpec,
    beta: np.ndarray | None = None,
) -> tuple[float, float]:
    """Weighted squared-residual integrals (g1 on secondary, g2 on beam)."""
    w = sampling.weights * sampling.alpha
    if beta is not None:
        w = w * beta
    g1 = float(w @ (max_secondary - spec.melt_temperature) ** 2)
    g2 = float(w @ (max_beam - spec.surface_temperature) ** 2)
    return g1, g2


class _HistoryInterpolant:
    """Cached temperature rise of segments before ``split`` at fixed points.

    Monotone cubic interpolation on a sqrt-stretched time grid starting at
    the window entry time; the sqrt variable absorbs the steep early decay
    right after the previous segment finishes.
    """

    def __init__(self, field: ThermalField, points: np.ndarray, split: int,
                 t_entry: float, max_span: float, n_nodes: int = 72):
        self.split = split
        self.t_entry = t_entry
        s_nodes = np.linspace(0.0, math.sqrt(max_span), n_nodes)
        times = t_entry + s_nodes**2
        grid = field.delta_grid(points, times, k_lo=0, k_hi=split)
        self._interp = PchipInterpolator(s_nodes, grid.T, axis=0, extrapolate=False)
        self._s_max = s_nodes[-1]

    def _s(self, times) -> np.ndarray:
        dt = np.asarray(times, dtype=float) - self.t_entry
        if np.any(dt < -1e-15) or np.any(np.sqrt(np.maximum(dt, 0.0)) > self._s_max * (1 + 1e-9)):
            raise ValueError("history queried outside its time grid")
        return np.minimum(np.sqrt(np.maximum(dt, 0.0)), self._s_max)

    def grid(self, idx, times) -> np.ndarray:
        vals = self._interp(self._s(times))  # (n_times, n_points)
        return vals[:, idx].T

    def pairs(self, idx, times) -> np.ndarray:
        vals = self._interp(self._s(times))
        return np.take_along_axis(vals, np.asarray(idx)[None, :], axis=1).diagonal()


class _ExactHistory:
    """Direct (uncached) evaluation of the pre-window temperature rise."""

    def __init__(self, field: ThermalField, points: np.ndarray, split: int):
        self.split = split
        self._field = field
        self._points = points

    def grid(self, idx, times) -> np.ndarray:
        return self._field.delta_grid(self._points[idx], times, k_lo=0, k_hi=self.split)

    def pairs(self, idx, times) -> np.ndarray:
        return self._field.delta_pairs(self._points[idx], times, k_lo=0, k_hi=self.split)


class WindowContext:
    """Thermal state for one local subproblem.

    Frozen parameters (segments before the window) keep their contribution
    to every sample point cached across the many objective evaluations of a
    window solve; the window's own segments are integrated per call.
    """

    def __init__(
        self,
        material: MaterialParams,
        path: ScanPath,
        secondary: SecondaryPath,
        spec: ObjectiveSpec,
        beam: BeamParameters,
        window: Window,
        *,
        freeze_segments: int | None = None,
        max_window_span: float | None = None,
        history_mode: str = "interp",
        jump_dwell: float = 0.0,
        threads: int = 1,
        decision_map=None,
    ):
        self.material = material
        self.path = path
        self.secondary = secondary
        self.spec = spec
        self.window = window
        self.base_beam = beam
        self.jump_dwell = jump_dwell
        self.threads = threads
        self._decision_map = decision_map
        self.sampling = sample_segments(path, secondary, spec, window.p, window.q)
        self._points = self.sampling.stacked_points()
        n = self.sampling.n_samples

        freeze = window.r if freeze_segments is None else freeze_segments
        beta = window_weights(path, Window(window.p, window.q, max(1, min(freeze, window.size))))
        self._beta = beta[self.sampling.segment - window.p]
        self._masked = bool(np.any(self.sampling.alpha * self._beta > 0.0))

        base_timing = compute_timing(path, beam.speed, jump_dwell)
        self._t_entry = float(base_timing.t_start[window.p]) if window.p > 0 else 0.0
        self.history = None
        if window.p > 0 and history_mode != "none":
            field0 = ThermalField(material, beam, path, base_timing, threads=threads)
            if history_mode == "interp":
                if max_window_span is None:
                    max_window_span = float(
                        np.sum(path.length[window.p : window.q + 1]) / beam.speed.min()
                    )
                self.history = _HistoryInterpolant(
                    field0, self._points, window.p, self._t_entry, 1.001 * max_window_span
                )
            elif history_mode == "exact":
                self.history = _ExactHistory(field0, self._points, window.p)
            else:
                raise ValueError(f"unknown history mode {history_mode!r}")
        self._n = n

    def beam_with(self, decision: np.ndarray) -> BeamParameters:
        """Full parameter arrays with the window slice replaced.

        Without a custom decision map the packing is [spot sizes..., speeds...]
        for segments p..q.
        """
        sl = slice(self.window.p, self.window.q + 1)
        if self._decision_map is not None:
            sigma_w, speed_w = self._decision_map(decision)
        else:
            m = self.window.size
            sigma_w, speed_w = decision[:m], decision[m:]
        return self.base_beam.replace(sl, sigma_w, speed_w)

    def max_temperatures(self, decision: np.ndarray, method: str | None = None):
        beam = self.beam_with(np.asarray(decision, dtype=float))
        timing = compute_timing(self.path, beam.speed, self.jump_dwell)
        fld = ThermalField(self.material, beam, self.path, timing, threads=self.threads)
        vals = fld.max_over_window(
            self._points,
            self.window.p,
            self.window.q,
            method=method or thermal.SMOOTHED,
            smoothing_scale=self.spec.smoothing_scale,
            refine_tol=self.spec.refine_tolerance,
            history=self.history,
        )
        return vals[: self._n], vals[self._n :]

    def objective(self, decision: np.ndarray, method: str | None = None) -> float:
        """Windowed cost of the packed decision [spot sizes..., speeds...]."""
        if not self._masked:
            return 0.0
        m_wd, m_s = self.max_temperatures(decision, method)
        g1, g2 = tracking_cost(m_wd, m_s, self.sampling, self.spec, self._beta)
        return self.spec.weight_melt * g1 + self.spec.weight_surface * g2

    def history_error(self, n_probe: int = 5) -> float:
        """Worst cached-vs-direct history mismatch on a few probes, K."""
        if self.history is None or isinstance(self.history, _ExactHistory):
            return 0.0
        base_timing = compute_timing(self.path, self.base_beam.speed, self.jump_dwell)
        fld = ThermalField(self.material, self.base_beam, self.path, base_timing)
        rng = np.random.default_rng(0)
        idx = rng.integers(0, len(self._points), n_probe)
        span = self.history._s_max**2
        times = self._t_entry + rng.uniform(0.0, span, n_probe)
        direct = fld.delta_pairs(self._points[idx], times, k_lo=0, k_hi=self.window.p)
        cached = self.history.pairs(idx, times)
        return float(np.abs(direct - cached).max())


def local_objective(decision, window: Window, context: WindowContext) -> float:
    """Windowed tracking cost for packed window decision variables."""
    if (window.p, window.q) != (context.window.p, context.window.q):
        raise ValueError("window does not match the prepared context")
    return context.objective(np.asarray(decision, dtype=float))


@dataclass
class GlobalObjective:
    """Reporting-grade objective breakdown (exact max temperatures)."""

    total: float  # K^2 m
    melt_term: float  # f1
    surface_term: float  # f2
    per_line: list  # (line, g1, g2) tuples, 0-based line index
    n_samples: int
    sample_spacing: float
    max_secondary: np.ndarray = field(repr=False, default=None)
    max_beam: np.ndarray = field(repr=False, default=None)
    sampling: PathSampling = field(repr=False, default=None)

    def report(self) -> dict:
        """JSON-compatible objective report (1-based line numbers)."""
        return {
            "J": self.total,
            "f1": self.melt_term,
            "f2": self.surface_term,
            "per_line": [
                {"line": line + 1, "g1": g1, "g2": g2} for line, g1, g2 in self.per_line
            ],
            "sampling": {"h_mm": self.sample_spacing * 1e3, "n_samples": self.n_samples},
        }


def global_objective(
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    spec: ObjectiveSpec,
    *,
    jump_dwell: float = 0.0,
    threads: int = 1,
    method: str = thermal.EXACT_SAMPLED,
) -> GlobalObjective:
    """Full-path tracking cost with exact (sampled + refined) maxima."""
    secondary = spec.secondary_for(path)
    sampling = sample_segments(path, secondary, spec, 0, path.n_segments - 1)
    timing = compute_timing(path, beam.speed, jump_dwell)
    fld = ThermalField(material, beam, path, timing, threads=threads)
    pts = sampling.stacked_points()
    vals = fld.max_over_window(
        pts,
        0,
        path.n_segments - 1,
        method=method,
        smoothing_scale=spec.smoothing_scale,
        refine_tol=spec.refine_tolerance,
    )
    n = sampling.n_samples
    m_wd, m_s = vals[:n], vals[n:]
    f1, f2 = tracking_cost(m_wd, m_s, sampling, spec)
    per_line = []
    lines = path._line_of[sampling.segment]
    for line in range(path.n_lines):
        sel = lines == line
        w = sampling.weights[sel] * sampling.alpha[sel]
        g1 = float(w @ (m_wd[sel] - spec.melt_temperature) ** 2)
        g2 = float(w @ (m_s[sel] - spec.surface_temperature) ** 2)
        per_line.append((line, g1, g2))
    return GlobalObjective(
        total=spec.weight_melt * f1 + spec.weight_surface * f2,
        melt_term=f1,
        surface_term=f2,
        per_line=per_line,
        n_samples=n,
        sample_spacing=spec.sample_spacing,
        max_secondary=m_wd,
        max_beam=m_s,
        sampling=sampling,
    )
