"""Explicit conservative finite differences for ``rho_t = Lap(rho^m) + g(x, y) rho``.

The diffusion term is discretized in divergence form
``div(m rho^(m-1) grad rho)`` with face mobilities taken as the arithmetic mean
of the two adjacent nodes, so the flux vanishes between empty cells and fronts
move at finite speed. Boundary nodes are held at zero (homogeneous Dirichlet).
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConfigurationError, DataError, ModeError, NumericalError
from .net import CONSTANT_V, PHYS_MODES, SPATIAL_V1V2, V_AND_A
from .physics import DENSITY, PATCH_RADIUS_SQ, Observations

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid2D:
    nx: int = 201
    ny: int = 201
    x: tuple[float, float] = (-3.0, 3.0)
    y: tuple[float, float] = (-3.0, 3.0)

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ConfigurationError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return (self.x[1] - self.x[0]) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y[1] - self.y[0]) / (self.ny - 1)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.x[0], self.x[1], self.nx)

    @property
    def ys(self) -> np.ndarray:
        return np.linspace(self.y[0], self.y[1], self.ny)

    def mesh(self):
        """``X, Y`` with ``values[i, j]`` living at ``(xs[i], ys[j])``."""
        return np.meshgrid(self.xs, self.ys, indexing="ij")


@dataclass
class DensityField:
    grid: Grid2D
    t: float
    values: np.ndarray
    steps: int = 0
    clipped_mass: float = 0.0

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.hx * self.grid.hy)


@dataclass
class SolveConfig:
    m: int = 3
    mode: str = CONSTANT_V
    coeffs: tuple[float, ...] = (2.0,)
    height: float = 1.0
    t_end: float = 1.0
    cfl: float = 0.4
    output_times: tuple[float, ...] | None = None
    max_steps: int = 50_000_000

    def __post_init__(self):
        if self.m < 2:
            raise ConfigurationError(f"m must be >= 2, got {self.m}")
        if not self.t_end > 0:
            raise ConfigurationError(f"t_end must be positive, got {self.t_end}")
        if not 0 < self.cfl <= 1:
            raise ConfigurationError(f"CFL safety factor must lie in (0, 1], got {self.cfl}")
        if self.mode not in PHYS_MODES:
            raise ModeError(f"unknown source mode {self.mode!r}")
        self.coeffs = tuple(float(c) for c in np.atleast_1d(self.coeffs))
        need = 2 if self.mode == SPATIAL_V1V2 else 1
        if len(self.coeffs) < need:
            raise ConfigurationError(f"mode {self.mode} needs {need} source coefficients")

    @property
    def times(self) -> tuple[float, ...]:
        ts = (self.t_end,) if self.output_times is None else tuple(float(t) for t in self.output_times)
        ts = tuple(sorted(set(ts)))
        if ts[0] < 0 or ts[-1] > self.t_end + 1e-12:
            raise ConfigurationError(f"output times must lie in [0, {self.t_end}], got {ts}")
        return ts


def source_field(config: SolveConfig, grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    if config.mode in (CONSTANT_V, V_AND_A):
        return np.full(X.shape, config.coeffs[0])
    return config.coeffs[0] + config.coeffs[1] * np.sin(np.sqrt(X * X + Y * Y))


def patch_initial(grid: Grid2D, height: float = 1.0) -> np.ndarray:
    """``height`` inside the open disc ``x^2 + y^2 < 0.25``, zero elsewhere."""
    X, Y = grid.mesh()
    rho = np.where(X * X + Y * Y < PATCH_RADIUS_SQ, float(height), 0.0)
    _zero_boundary(rho)
    return rho


def barenblatt(x, y, t, C: float, m: int = 3):
    """Closed-form self-similar solution of ``rho_t = Lap(rho^m)`` in two dimensions."""
    d = 2
    alpha = d / (d * (m - 1) + 2)
    beta = alpha / d
    k = alpha * (m - 1) / (2 * m * d)
    r2 = np.asarray(x) ** 2 + np.asarray(y) ** 2
    core = np.maximum(C - k * r2 * t ** (-2 * beta), 0.0)
    return t ** (-alpha) * core ** (1.0 / (m - 1))


def _zero_boundary(a):
    a[0, :] = 0
    a[-1, :] = 0
    a[:, 0] = 0
    a[:, -1] = 0


@numba.njit(cache=True)
def _pme_step(rho, mob, g, dt, hx, hy, m, out):
    """One explicit step into ``out``; returns (clipped mass density, new max)."""
    nx, ny = rho.shape
    for i in range(nx):
        for j in range(ny):
            r = rho[i, j]
            p = r
            for _ in range(m - 2):
                p *= r
            mob[i, j] = m * p
    cx = 0.5 * dt / (hx * hx)
    cy = 0.5 * dt / (hy * hy)
    clipped = 0.0
    rmax = 0.0
    for i in range(1, nx - 1):
        for j in range(1, ny - 1):
            r = rho[i, j]
            d0 = mob[i, j]
            fx = (d0 + mob[i + 1, j]) * (rho[i + 1, j] - r) - (mob[i - 1, j] + d0) * (r - rho[i - 1, j])
            fy = (d0 + mob[i, j + 1]) * (rho[i, j + 1] - r) - (mob[i, j - 1] + d0) * (r - rho[i, j - 1])
            new = r + (cx * fx + cy * fy) + dt * g[i, j] * r
            if new < 0.0:
                clipped -= new
                new = 0.0
            if new > rmax or new != new:
                rmax = new
            out[i, j] = new
    return clipped, rmax


def solve(config: SolveConfig, grid: Grid2D, rho0: np.ndarray | None = None) -> list[DensityField]:
    """March from ``t = 0`` and return a snapshot at every output time."""
    rho = patch_initial(grid, config.height) if rho0 is None else np.array(rho0, dtype=float)
    if rho.shape != (grid.nx, grid.ny):
        raise ConfigurationError(f"initial field has shape {rho.shape}, grid is {(grid.nx, grid.ny)}")
    if np.any(rho < 0):
        raise ConfigurationError("initial density must be non-negative")
    edge = np.concatenate([rho[0], rho[-1], rho[:, 0], rho[:, -1]])
    if np.any(edge != 0):
        raise ConfigurationError("initial density must vanish on the boundary")

    g = source_field(config, grid)
    gmax = float(np.abs(g).max())
    h2 = min(grid.hx, grid.hy) ** 2
    out = np.zeros_like(rho)
    mob = np.empty_like(rho)
    rmax = float(rho.max())
    t, steps, clipped = 0.0, 0, 0.0
    fields = []
    for t_out in config.times:
        while t < t_out:
            dmax = config.m * rmax ** (config.m - 1)
            dt = t_out - t
            if dmax > 0:
                dt = min(dt, config.cfl * h2 / (2 * 2 * dmax))
            if gmax > 0:
                dt = min(dt, config.cfl / gmax)
            if dt <= 1e-14 * config.t_end:
                raise NumericalError(f"time step underflow (dt={dt:g}) at t={t:g}")
            if t + dt >= t_out or t_out - (t + dt) < 1e-12 * config.t_end:
                dt = t_out - t
                t_next = t_out
            else:
                t_next = t + dt
            c, rmax = _pme_step(rho, mob, g, dt, grid.hx, grid.hy, config.m, out)
            clipped += c * grid.hx * grid.hy
            rho, out = out, rho
            t = t_next
            steps += 1
            if steps > config.max_steps:
                raise NumericalError(f"exceeded {config.max_steps} time steps before t={t_out}")
            if not np.isfinite(rmax):
                raise NumericalError(f"solution became non-finite at t={t:g}")
        if not np.all(np.isfinite(rho)):
            raise NumericalError(f"solution became non-finite at t={t:g}")
        fields.append(DensityField(grid, t_out, rho.copy(), steps, clipped))
    if clipped > 0:
        log.info("clipped %.3g mass of negative undershoot over %d steps", clipped, steps)
    return fields


# -- sampling ----------------------------------------------------------------------

def sample_fields(fields: list[DensityField], points) -> np.ndarray:
    """Bilinear values at ``(t, x, y)`` points; every ``t`` must match a snapshot time."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    times = np.array([f.t for f in fields])
    out = np.empty(len(points))
    done = np.zeros(len(points), dtype=bool)
    for f in fields:
        sel = np.abs(points[:, 0] - f.t) <= 1e-12
        if not sel.any():
            continue
        interp = RegularGridInterpolator((f.grid.xs, f.grid.ys), f.values, method="linear")
        out[sel] = interp(points[sel, 1:])
        done |= sel
    if not done.all():
        bad = points[~done, 0]
        raise DataError(f"no snapshot at t={bad[0]:g} (snapshots: {times.tolist()})")
    return out


def synthetic_dataset(config: SolveConfig, grid: Grid2D, n_points: int = 200, seed: int = 0,
                      fields: list[DensityField] | None = None) -> Observations:
    """Solve (unless ``fields`` is given) and sample ``n_points`` densities uniformly over
    the output snapshots in time and over the box in space."""
    fields = solve(config, grid) if fields is None else fields
    rng = np.random.default_rng(seed)
    times = np.array([f.t for f in fields])
    t = times[rng.integers(len(times), size=n_points)]
    x = grid.x[0] + (grid.x[1] - grid.x[0]) * rng.random(n_points)
    y = grid.y[0] + (grid.y[1] - grid.y[0]) * rng.random(n_points)
    pts = np.column_stack([t, x, y])
    return Observations(pts, sample_fields(fields, pts), DENSITY)


def add_noise(obs: Observations, eps: float, sigma: float, seed: int = 0) -> Observations:
    """``z + eps * eta`` with ``eta ~ N(0, sigma^2)`` per point; no re-clipping."""
    if eps < 0 or sigma < 0:
        raise ConfigurationError("noise scale and standard deviation must be >= 0")
    rng = np.random.default_rng(seed)
    eta = rng.normal(0.0, sigma, size=len(obs))
    return Observations(obs.points.copy(), obs.values + eps * eta, obs.kind)


# -- snapshot files ------------------------------------------------------------------

def snapshot_meta(f: DensityField, config: SolveConfig | None = None) -> dict:
    meta = {"grid": asdict(f.grid), "t": f.t, "steps": f.steps}
    if config is not None:
        meta.update(m=config.m, mode=config.mode, coeffs=list(config.coeffs), height=config.height)
    return meta


def write_snapshot_csv(f: DensityField, path, config: SolveConfig | None = None, header: dict | None = None):
    """``x,y,value`` rows preceded by ``# key: value`` metadata lines."""
    path = Path(path)
    meta = {**(header or {}), **snapshot_meta(f, config)}
    X, Y = f.grid.mesh()
    with path.open("w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k}: {json.dumps(v)}\n")
        fh.write("x,y,value\n")
        for x, y, v in zip(X.ravel(), Y.ravel(), f.values.ravel()):
            fh.write(f"{x!r},{y!r},{v!r}\n")
    return path


def write_snapshot_binary(f: DensityField, path, config: SolveConfig | None = None, header: dict | None = None):
    """Little-endian float64 array (C order, ``[i, j]`` at ``(x_i, y_j)``) plus a JSON sidecar."""
    path = Path(path)
    f.values.astype("<f8").tofile(path)
    meta = {**(header or {}), **snapshot_meta(f, config), "dtype": "<f8", "shape": list(f.values.shape)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_snapshot_binary(path) -> DensityField:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    grid = Grid2D(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["grid"].items()})
    values = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
    return DensityField(grid, meta["t"], values, meta.get("steps", 0))
