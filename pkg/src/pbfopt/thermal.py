"""Analytic pointwise temperature for a beam-scanned half space.

The temperature field is u_init plus one kernel integral per already-started
segment: each segment contributes the time integral of an image-doubled
half-space heat kernel convolved with the moving Gaussian surface flux,

    dT_k(x, t) = (P / rho c_p) * int_{tau_lo}^{tau_hi}
        exp(-|x_lat - x_beam(t - tau)|^2 / (2 (sigma_k^2 + 2 kappa tau)))
        / (2 pi (sigma_k^2 + 2 kappa tau))
        * exp(-z^2 / (4 kappa tau)) / sqrt(pi kappa tau) dtau

with tau_lo = max(0, t - t_k^f) and tau_hi = t - t_k^i.  The integrals are
evaluated by the compiled kernels when available (``pbfopt._kernels``) and
otherwise by the pure-NumPy fallback; both apply the substitution tau = s^2,
adaptive Gauss-Kronrod panels, and conservative per-segment culling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .scanpath import ScanPath, ScanTiming

if os.environ.get("PBFOPT_PURE"):
    from . import _kernels_py as _impl

    COMPILED = False
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:
        from . import _kernels_py as _impl

        COMPILED = False


def backend_name() -> str:
    return "compiled" if COMPILED else "pure-python"


# Quadrature control for the per-segment integrals.
RTOL = 1e-7
ATOL_K = 1e-9  # K, absolute tolerance per segment contribution
CULL_K = 1e-9  # K, skip a segment when its contribution bound is below this

# Time sampling: the beam advances at most sigma_k / TIME_SAMPLES_PER_SPOT
# per sample while scanning segment k.
TIME_SAMPLES_PER_SPOT = 4.0
MIN_SAMPLES_PER_SEGMENT = 4

EXACT_SAMPLED = "exact_sampled"
SMOOTHED = "smoothed"


class QuadratureError(RuntimeError):
    """Adaptive quadrature missed its tolerance.

    Carries the achieved error estimate (K) and the number of failed
    integrals.
    """

    def __init__(self, achieved_error: float, n_failed: int):
        super().__init__(
            f"{n_failed} segment integral(s) missed tolerance; "
            f"worst achieved error {achieved_error:.3e} K"
        )
        self.achieved_error = achieved_error
        self.n_failed = n_failed


@dataclass(frozen=True)
class MaterialParams:
    """Constant material data plus the absorbed beam power."""

    conductivity: float  # W/(m K)
    diffusivity: float  # m^2/s
    initial_temperature: float  # K
    power: float  # W

    def __post_init__(self):
        if self.conductivity <= 0.0 or self.diffusivity <= 0.0:
            raise ValueError("conductivity and diffusivity must be positive")
        if self.initial_temperature <= 0.0:
            raise ValueError("initial temperature must be positive")
        if self.power < 0.0:
            raise ValueError("power must be nonnegative")

    @property
    def volumetric_heat_capacity(self) -> float:
        """rho * c_p = conductivity / diffusivity, J/(m^3 K)."""
        return self.conductivity / self.diffusivity

    @property
    def source_coefficient(self) -> float:
        """P / (rho c_p), the prefactor of every kernel integral."""
        return self.power / self.volumetric_heat_capacity


@dataclass(frozen=True)
class BeamParameters:
    """Per-segment spot size and speed arrays."""

    spot_size: np.ndarray  # m
    speed: np.ndarray  # m/s

    def __post_init__(self):
        sigma = np.ascontiguousarray(self.spot_size, dtype=float)
        v = np.ascontiguousarray(self.speed, dtype=float)
        if sigma.ndim != 1 or sigma.shape != v.shape:
            raise ValueError("spot_size and speed must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(sigma)) and np.all(np.isfinite(v))):
            raise ValueError("beam parameters must be finite")
        if np.any(sigma <= 0.0) or np.any(v <= 0.0):
            raise ValueError("beam parameters must be positive")
        sigma.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "spot_size", sigma)
        object.__setattr__(self, "speed", v)

    @property
    def n_segments(self) -> int:
        return len(self.spot_size)

    @staticmethod
    def constant(n_segments: int, spot_size: float, speed: float) -> "BeamParameters":
        return BeamParameters(
            np.full(n_segments, float(spot_size)), np.full(n_segments, float(speed))
        )

    def replace(self, indices, spot_size, speed) -> "BeamParameters":
        sigma = self.spot_size.copy()
        v = self.speed.copy()
        sigma[indices] = spot_size
        v[indices] = speed
        return BeamParameters(sigma, v)


@dataclass(frozen=True)
class MaxTempQuery:
    """Maximum-temperature request at one point over a segment window."""

    point: np.ndarray
    window: tuple[int, int]  # (p, q) inclusive, 0-based
    method: str = EXACT_SAMPLED
    smoothing_scale: float = 0.1  # 1/K, smoothed method only

    def __post_init__(self):
        p, q = self.window
        if p > q or p < 0:
            raise ValueError(f"empty or invalid window {self.window}")
        if self.method not in (EXACT_SAMPLED, SMOOTHED):
            raise ValueError(f"unknown max-temperature method {self.method!r}")
        if self.method == SMOOTHED and self.smoothing_scale <= 0.0:
            raise ValueError("smoothing scale must be positive")


class ThermalField:
    """Bundles path, timing, parameters and tolerances for evaluation.

    All methods are pure functions of the construction arguments; instances
    are safe to share between threads.
    """

    def __init__(
        self,
        material: MaterialParams,
        beam: BeamParameters,
        path: ScanPath,
        timing: ScanTiming,
        *,
        rtol: float = RTOL,
        atol: float = ATOL_K,
        cull: float = CULL_K,
        threads: int = 1,
    ):
        if beam.n_segments != path.n_segments:
            raise ValueError("beam parameter arrays do not match the path")
        self.material = material
        self.beam = beam
        self.path = path
        self.timing = timing
        self.rtol = rtol
        self.atol = atol
        self.cull = cull
        self.threads = max(1, int(threads))
        self._x0 = np.ascontiguousarray(path.start[:, 0])
        self._y0 = np.ascontiguousarray(path.start[:, 1])
        self._cth = np.ascontiguousarray(np.cos(path.angle))
        self._sth = np.ascontiguousarray(np.sin(path.angle))

    # -- core batched evaluation -------------------------------------------

    def delta_pairs(self, points, times, k_lo: int = 0, k_hi: int | None = None) -> np.ndarray:
        """Temperature rise above u_init at (point_i, time_i) pairs.

        Only segments in [k_lo, k_hi) contribute.  Raises QuadratureError if
        any integral misses tolerance.
        """
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=float)
        t = np.ascontiguousarray(np.atleast_1d(times), dtype=float)
        if pts.shape != (len(t), 3):
            raise ValueError("need matching (n, 3) points and (n,) times")
        if np.any(pts[:, 2] > 0.0):
            raise ValueError("points must lie in the lower half space (z <= 0)")
        if k_hi is None:
            k_hi = self.path.n_segments
        out = np.zeros(len(t))
        px = np.ascontiguousarray(pts[:, 0])
        py = np.ascontiguousarray(pts[:, 1])
        pz = np.ascontiguousarray(pts[:, 2])
        args = (
            np.asarray(self._x0),
            np.asarray(self._y0),
            np.asarray(self._cth),
            np.asarray(self._sth),
            np.asarray(self.timing.t_start),
            np.asarray(self.timing.t_end),
            np.asarray(self.beam.spot_size),
            np.asarray(self.beam.speed),
            self.material.diffusivity,
            self.material.source_coefficient,
            self.rtol,
            self.atol,
            self.cull,
        )
        if self.threads > 1 and COMPILED and len(t) >= 4 * self.threads:
            chunks = np.array_split(np.arange(len(t)), self.threads)
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                futs = [
                    pool.submit(
                        _impl.delta_t_pairs,
                        px[c[0] : c[-1] + 1],
                        py[c[0] : c[-1] + 1],
                        pz[c[0] : c[-1] + 1],
                        t[c[0] : c[-1] + 1],
                        k_lo,
                        k_hi,
                        *args,
                        out[c[0] : c[-1] + 1],
                    )
                    for c in chunks
                    if len(c)
                ]
                results = [f.result() for f in futs]
            worst = max(r[0] for r in results)
            n_fail = sum(r[1] for r in results)
        else:
            worst, n_fail = _impl.delta_t_pairs(px, py, pz, t, k_lo, k_hi, *args, out)
        if n_fail:
            raise QuadratureError(worst, n_fail)
        return out

    def delta_grid(self, points, times, k_lo: int = 0, k_hi: int | None = None) -> np.ndarray:
        """Temperature rise on the product grid points x times, shape (n, m)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        t = np.atleast_1d(np.asarray(times, dtype=float))
        n, m = len(pts), len(t)
        flat = self.delta_pairs(
            np.repeat(pts, m, axis=0), np.tile(t, n), k_lo=k_lo, k_hi=k_hi
        )
        return flat.reshape(n, m)

    def temperature_at(self, point, t: float) -> float:
        return self.material.initial_temperature + float(self.delta_pairs([point], [t])[0])

    # -- time sampling and maxima ------------------------------------------

    def window_times(self, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint time samples and weights covering segments p..q.

        Per segment the sample count keeps the beam advance per step at or
        below sigma_k / TIME_SAMPLES_PER_SPOT.
        """
        times = []
        weights = []
        for k in range(p, q + 1):
            n = max(
                MIN_SAMPLES_PER_SEGMENT,
                math.ceil(
                    TIME_SAMPLES_PER_SPOT * self.path.length[k] / self.beam.spot_size[k]
                ),
            )
            t0 = self.timing.t_start[k]
            dt = (self.timing.t_end[k] - t0) / n
            times.append(t0 + dt * (np.arange(n) + 0.5))
            weights.append(np.full(n, dt))
        return np.concatenate(times), np.concatenate(weights)

    def max_over_window(
        self,
        points,
        p: int,
        q: int,
        method: str = EXACT_SAMPLED,
        smoothing_scale: float = 0.1,
        refine_tol: float = 1e-3,
        history=None,
    ) -> np.ndarray:
        """Maximum temperature over the window's time span, per point.

        exact_sampled takes the best time sample and refines it by
        golden-section search; smoothed applies a shifted log-sum-exp over
        the same samples with normalized quadrature weights.  ``history``
        optionally replaces the direct integration of segments before its
        split index: it must expose ``split``, ``grid(point_indices, times)``
        and ``pairs(point_indices, times)`` returning the temperature rise of
        those segments for the same point set given here.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        times, weights = self.window_times(p, q)
        if history is None:
            u = self.delta_grid(pts, times)
        else:
            u = self.delta_grid(pts, times, k_lo=history.split)
            u = u + history.grid(np.arange(len(pts)), times)
        u = u + self.material.initial_temperature
        if method == SMOOTHED:
            u_star = u.max(axis=1)
            w = weights / weights.sum()
            arg = np.exp(smoothing_scale * (u - u_star[:, None])) @ w
            return u_star + np.log(arg) / smoothing_scale
        if method != EXACT_SAMPLED:
            raise ValueError(f"unknown max-temperature method {method!r}")

        t_lo = float(self.timing.t_start[p])
        t_hi = float(self.timing.t_end[q])
        best = u.max(axis=1)
        for bracket in self._top_brackets(u, times, t_lo, t_hi, n_brackets=2):
            lo, hi, mask = bracket
            if not mask.any():
                continue
            idx = np.flatnonzero(mask)
            refined = self._golden_max(pts[idx], idx, lo[idx], hi[idx], refine_tol, history)
            best[idx] = np.maximum(best[idx], refined)
        return best

    @staticmethod
    def _top_brackets(u, times, t_lo, t_hi, n_brackets):
        """Brackets around the best local maxima of the sampled history."""
        n, m = u.shape
        order = np.argsort(u, axis=1)
        taken = np.zeros((n, m), dtype=bool)
        for rank in range(n_brackets):
            j = order[:, -(rank + 1)]
            rows = np.arange(n)
            fresh = ~taken[rows, j]
            for off in (-1, 0, 1):
                jj = np.clip(j + off, 0, m - 1)
                taken[rows, jj] = True
            lo = np.where(j > 0, times[np.maximum(j - 1, 0)], t_lo)
            hi = np.where(j < m - 1, times[np.minimum(j + 1, m - 1)], t_hi)
            yield lo, hi, fresh

    def _golden_max(self, pts, idx, lo, hi, tol, history, max_iter=40):
        """Vectorized golden-section maximization of u(point, t) per point."""
        inv_phi = (math.sqrt(5.0) - 1.0) / 2.0

        def evaluate(tt):
            if history is None:
                return self.delta_pairs(pts, tt)
            vals = self.delta_pairs(pts, tt, k_lo=history.split)
            return vals + history.pairs(idx, tt)

        a, b = lo.astype(float).copy(), hi.astype(float).copy()
        c = b - inv_phi * (b - a)
        d = a + inv_phi * (b - a)
        fc = evaluate(c)
        fd = evaluate(d)
        for _ in range(max_iter):
            move_right = fc < fd
            a = np.where(move_right, c, a)
            b = np.where(move_right, b, d)
            c_new = b - inv_phi * (b - a)
            d_new = a + inv_phi * (b - a)
            probe_t = np.where(move_right, d_new, c_new)
            f_new = evaluate(probe_t)
            fc = np.where(move_right, fd, f_new)
            fd = np.where(move_right, f_new, fd)
            c, d = c_new, d_new
            if np.all(np.abs(fd - fc) < 0.25 * tol):
                break
        return np.maximum(fc, fd) + self.material.initial_temperature


# -- spec-level operations ---------------------------------------------------


def segment_contribution(
    x,
    t: float,
    k: int,
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
    *,
    rtol: float = RTOL,
    atol: float = ATOL_K,
) -> float:
    """Temperature rise at (x, t) due to segment k alone (0-based)."""
    if not 0 <= k < path.n_segments:
        raise ValueError(f"segment index {k} out of range")
    if t <= timing.t_start[k]:
        return 0.0
    field = ThermalField(material, beam, path, timing, rtol=rtol, atol=atol, cull=0.0)
    return float(field.delta_pairs([x], [t], k_lo=k, k_hi=k + 1)[0])


def temperature(
    x,
    t: float,
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
) -> float:
    """Full superposition temperature at one point and time."""
    if t < 0.0 or t > timing.total_time:
        raise ValueError(f"time {t} outside [0, {timing.total_time}]")
    return ThermalField(material, beam, path, timing).temperature_at(x, t)


def max_temperature(
    query: MaxTempQuery,
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
) -> float:
    p, q = query.window
    if q >= path.n_segments:
        raise ValueError(f"window {query.window} exceeds path")
    field = ThermalField(material, beam, path, timing)
    return float(
        field.max_over_window(
            [query.point], p, q, method=query.method, smoothing_scale=query.smoothing_scale
        )[0]
    )


def field_on_grid(
    grid,
    time_spec,
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
    *,
    method: str = EXACT_SAMPLED,
    smoothing_scale: float = 0.1,
    threads: int = 1,
) -> np.ndarray:
    """Temperature snapshot or max-temperature field on a set of points.

    time_spec is either ("snapshot", t) or ("max", (p, q)).  Output order
    matches the input point order.
    """
    pts = np.atleast_2d(np.asarray(grid, dtype=float))
    if len(pts) == 0:
        raise ValueError("grid must be nonempty")
    field = ThermalField(material, beam, path, timing, threads=threads)
    kind = time_spec[0]
    if kind == "snapshot":
        t = float(time_spec[1])
        u = field.delta_grid(pts, [t])[:, 0]
        return u + material.initial_temperature
    if kind == "max":
        p, q = time_spec[1]
        return field.max_over_window(pts, p, q, method=method, smoothing_scale=smoothing_scale)
    raise ValueError(f"unknown time spec {time_spec!r}")


def calibrate_smoothing(
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
    *,
    target: float = 5.0,
    initial: float = 0.1,
    max_scale: float = 50.0,
) -> float:
    """Smoothing scale such that smoothed and exact maxima agree on a probe.

    The probe is the midpoint of the first segment with a single-segment
    window; the scale doubles from ``initial`` until the gap is below
    ``target`` Kelvin.
    """
    field = ThermalField(material, beam, path, timing)
    probe = path.point_at(0, 0.5)
    exact = field.max_over_window([probe], 0, 0, method=EXACT_SAMPLED)[0]
    scale = initial
    while scale <= max_scale:
        smoothed = field.max_over_window([probe], 0, 0, method=SMOOTHED, smoothing_scale=scale)[0]
        if abs(smoothed - exact) < target:
            return scale
        scale *= 2.0
    raise RuntimeError(f"smoothing calibration failed to reach {target} K by scale {max_scale}")


def write_field_csv(filename, points, values) -> None:
    """Grid/field export: x_mm,y_mm,z_mm,value_K, row order as given."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(values, dtype=float)
    with open(filename, "w") as fh:
        fh.write("x_mm,y_mm,z_mm,value_K\n")
        for (x, y, z), v in zip(pts, vals):
            fh.write(f"{x * 1e3:.9g},{y * 1e3:.9g},{z * 1e3:.9g},{v:.6f}\n")
