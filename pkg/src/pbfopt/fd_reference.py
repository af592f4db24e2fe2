"""Explicit finite-difference reference solver for the half-space problem.

Test-only cross-check for the analytic kernels: a conservative finite-volume
discretization of the heat equation on a truncated box with the Gaussian
beam flux injected into the surface cell layer and insulated (zero-flux)
walls everywhere.  Nothing here shares numerics with the analytic path; the
stencil is plain NumPy array arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scanpath import ScanPath, ScanTiming
from .thermal import BeamParameters, MaterialParams


class StabilityError(ValueError):
    """Requested time step violates the explicit stability bound."""


@dataclass(frozen=True)
class FdGrid:
    """Uniform cell-centered grid on [x0,x1] x [y0,y1] x [-depth, 0]."""

    x_range: tuple[float, float]
    y_range: tuple[float, float]
    depth: float
    spacing: float
    time_step: float | None = None  # default: 90% of the stability bound

    def __post_init__(self):
        if self.spacing <= 0.0 or self.depth <= 0.0:
            raise ValueError("spacing and depth must be positive")
        if self.x_range[1] <= self.x_range[0] or self.y_range[1] <= self.y_range[0]:
            raise ValueError("empty box")

    @property
    def shape(self) -> tuple[int, int, int]:
        h = self.spacing
        return (
            max(2, round((self.x_range[1] - self.x_range[0]) / h)),
            max(2, round((self.y_range[1] - self.y_range[0]) / h)),
            max(2, round(self.depth / h)),
        )

    def centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nx, ny, nz = self.shape
        h = self.spacing
        x = self.x_range[0] + h * (np.arange(nx) + 0.5)
        y = self.y_range[0] + h * (np.arange(ny) + 0.5)
        z = -h * (np.arange(nz) + 0.5)  # index 0 is the surface layer
        return x, y, z


def stable_time_step(grid: FdGrid, diffusivity: float) -> float:
    h2 = grid.spacing * grid.spacing
    return 0.5 / (diffusivity * 3.0 / h2)


@dataclass
class FdResult:
    times: np.ndarray
    probe_history: np.ndarray  # (n_probes, n_times)
    boundary_excess: float  # max |u - u_init| on the box walls at t_final, K
    boundary_contaminated: bool
    energy_input: float  # J, integral of the sampled flux
    energy_content: float  # J, field energy above u_init at t_final

    def to_csv(self, filename) -> None:
        cols = ",".join(f"u{i}_K" for i in range(len(self.probe_history)))
        with open(filename, "w") as fh:
            fh.write(f"t_s,{cols}\n")
            for j, t in enumerate(self.times):
                vals = ",".join(f"{u:.6f}" for u in self.probe_history[:, j])
                fh.write(f"{t:.9g},{vals}\n")


def _laplacian(u: np.ndarray, h2: float, out: np.ndarray) -> np.ndarray:
    """7-point Laplacian with mirrored (zero-flux) walls."""
    out.fill(0.0)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        mid = [slice(None)] * 3
        lo[axis] = slice(0, -2)
        mid[axis] = slice(1, -1)
        hi[axis] = slice(2, None)
        out[tuple(mid)] += u[tuple(hi)] - 2.0 * u[tuple(mid)] + u[tuple(lo)]
        first = [slice(None)] * 3
        second = [slice(None)] * 3
        first[axis] = slice(0, 1)
        second[axis] = slice(1, 2)
        out[tuple(first)] += u[tuple(second)] - u[tuple(first)]
        last = [slice(None)] * 3
        prev = [slice(None)] * 3
        last[axis] = slice(-1, None)
        prev[axis] = slice(-2, -1)
        out[tuple(last)] += u[tuple(prev)] - u[tuple(last)]
    out /= h2
    return out


def _trilinear(field: np.ndarray, grid: FdGrid, probes: np.ndarray) -> np.ndarray:
    nx, ny, nz = field.shape
    h = grid.spacing
    fx = np.clip((probes[:, 0] - grid.x_range[0]) / h - 0.5, 0.0, nx - 1.000001)
    fy = np.clip((probes[:, 1] - grid.y_range[0]) / h - 0.5, 0.0, ny - 1.000001)
    fz = np.clip(-probes[:, 2] / h - 0.5, 0.0, nz - 1.000001)
    i0, j0, k0 = fx.astype(int), fy.astype(int), fz.astype(int)
    ax, ay, az = fx - i0, fy - j0, fz - k0
    val = np.zeros(len(probes))
    for di, wx in ((0, 1.0 - ax), (1, ax)):
        for dj, wy in ((0, 1.0 - ay), (1, ay)):
            for dk, wz in ((0, 1.0 - az), (1, az)):
                val += wx * wy * wz * field[i0 + di, j0 + dj, k0 + dk]
    return val


def fd_solve(
    grid: FdGrid,
    material: MaterialParams,
    beam: BeamParameters,
    path: ScanPath,
    timing: ScanTiming,
    probes,
    t_final: float,
    boundary_limit: float = 1e-3,
) -> FdResult:
    """March the explicit scheme to t_final and record probe temperatures.

    The Gaussian flux is sampled at cell centers at the half step and fed as
    a volumetric source into the surface layer; this keeps the scheme
    conservative, so the energy balance check is exact up to flux sampling.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if (
        np.any(probes[:, 0] < grid.x_range[0])
        or np.any(probes[:, 0] > grid.x_range[1])
        or np.any(probes[:, 1] < grid.y_range[0])
        or np.any(probes[:, 1] > grid.y_range[1])
        or np.any(probes[:, 2] > 0.0)
        or np.any(probes[:, 2] < -grid.depth)
    ):
        raise ValueError("probes must lie inside the grid box")

    dt_max = stable_time_step(grid, material.diffusivity)
    dt = grid.time_step if grid.time_step is not None else 0.9 * dt_max
    if dt > dt_max * (1.0 + 1e-12):
        raise StabilityError(f"time step {dt} exceeds stability bound {dt_max}")

    nx, ny, nz = grid.shape
    h = grid.spacing
    xc, yc, _ = grid.centers()
    X, Y = np.meshgrid(xc, yc, indexing="ij")
    rho_cp = material.volumetric_heat_capacity
    t_end = np.asarray(timing.t_end)
    t_start = np.asarray(timing.t_start)

    u = np.full((nx, ny, nz), material.initial_temperature)
    lap = np.empty_like(u)
    n_steps = int(np.ceil(t_final / dt))
    times = np.empty(n_steps + 1)
    hist = np.empty((len(probes), n_steps + 1))
    times[0] = 0.0
    hist[:, 0] = material.initial_temperature
    energy_in = 0.0

    t = 0.0
    for step in range(n_steps):
        dt_k = min(dt, t_final - t)
        t_mid = t + 0.5 * dt_k
        _laplacian(u, h * h, lap)
        u += (dt_k * material.diffusivity) * lap
        k = int(np.searchsorted(t_end, t_mid, side="left"))
        if k < path.n_segments and t_mid > t_start[k] and material.power > 0.0:
            frac = (t_mid - t_start[k]) / (t_end[k] - t_start[k])
            bx, by = (
                path.start[k, :2] + frac * (path.end[k, :2] - path.start[k, :2])
            )
            sig2 = beam.spot_size[k] ** 2
            flux = (
                material.power
                / (2.0 * np.pi * sig2)
                * np.exp(-((X - bx) ** 2 + (Y - by) ** 2) / (2.0 * sig2))
            )
            u[:, :, 0] += (dt_k / (rho_cp * h)) * flux
            energy_in += dt_k * float(flux.sum()) * h * h
        t += dt_k
        times[step + 1] = t
        hist[:, step + 1] = _trilinear(u, grid, probes)

    excess = max(
        float(np.abs(u[0] - material.initial_temperature).max()),
        float(np.abs(u[-1] - material.initial_temperature).max()),
        float(np.abs(u[:, 0] - material.initial_temperature).max()),
        float(np.abs(u[:, -1] - material.initial_temperature).max()),
        float(np.abs(u[:, :, -1] - material.initial_temperature).max()),
    )
    content = float((u - material.initial_temperature).sum()) * rho_cp * h**3
    return FdResult(
        times=times,
        probe_history=hist,
        boundary_excess=excess,
        boundary_contaminated=excess > boundary_limit,
        energy_input=energy_in,
        energy_content=content,
    )
