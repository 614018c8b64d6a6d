"""Observed tumor radii, binary tumor-presence samples and radius extraction."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DataError, NoBoundaryError
from .physics import BINARY, DENSITY, Domain, Observations

INITIAL_RADIUS = 0.5

# rescaled time -> measured radius
RADIUS_TABLE = (
    (0.25, 0.66),
    (0.375, 0.97),
    (0.5, 1.26),
    (0.625, 1.48),
    (0.75, 1.93),
    (0.875, 2.13),
    (1.0, 2.5),
)


@dataclass(frozen=True)
class RadiusSeries:
    entries: tuple[tuple[float, float], ...]

    def __post_init__(self):
        entries = tuple((float(t), float(r)) for t, r in self.entries)
        ts = [t for t, _ in entries]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise DataError("radius table times must be strictly increasing")
        if ts and (ts[0] < 0 or ts[-1] > 1):
            raise DataError("radius table times must lie in [0, 1]")
        if any(r <= 0 for _, r in entries):
            raise DataError("radii must be positive")
        object.__setattr__(self, "entries", entries)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.entries)

    def radius_at(self, t: float) -> float:
        """Tabulated radius at ``t`` (``t = 0`` gives the initial patch radius). No interpolation."""
        for tt, r in self.entries:
            if abs(tt - t) <= 1e-12:
                return r
        if abs(t) <= 1e-12:
            return INITIAL_RADIUS
        raise DataError(f"no observed radius at t={t:g}; tabulated times are {list(self.times)}")


def builtin_radius_table() -> RadiusSeries:
    return RadiusSeries(RADIUS_TABLE)


def read_radius_csv(path) -> RadiusSeries:
    """CSV with header ``t,radius``; ``#`` lines are ignored."""
    rows = _read_csv(path, ("t", "radius"))
    return RadiusSeries(tuple((float(r["t"]), float(r["radius"])) for r in rows))


class BinaryObservation(NamedTuple):
    t: float
    x: float
    y: float
    label: int


def label_points(series: RadiusSeries, points) -> np.ndarray:
    """1 where ``sqrt(x^2 + y^2) < R(t)``, else 0."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    radii = np.array([series.radius_at(t) for t in points[:, 0]])
    return (np.hypot(points[:, 1], points[:, 2]) < radii).astype(float)


def make_binary_dataset(series: RadiusSeries, train_times, n_points: int = 200, seed: int = 0,
                        balanced: bool = False, domain: Domain = Domain()) -> Observations:
    """0/1 tumor-presence samples at the given times under radial symmetry.

    Times are drawn uniformly from ``train_times`` and positions uniformly over
    the box. With ``balanced`` half of the points are drawn inside the disc.
    """
    train_times = [float(t) for t in train_times]
    if not train_times:
        raise DataError("need at least one training time")
    radii = np.array([series.radius_at(t) for t in train_times])
    rng = np.random.default_rng(seed)
    idx = rng.integers(len(train_times), size=n_points)
    t = np.asarray(train_times)[idx]
    xy = np.empty((n_points, 2))
    if not balanced:
        xy[:, 0] = domain.x[0] + (domain.x[1] - domain.x[0]) * rng.random(n_points)
        xy[:, 1] = domain.y[0] + (domain.y[1] - domain.y[0]) * rng.random(n_points)
    else:
        inside = np.arange(n_points) < n_points // 2
        for k in range(n_points):
            R = radii[idx[k]]
            if inside[k]:
                r, th = R * np.sqrt(rng.random()), 2 * np.pi * rng.random()
                xy[k] = r * np.cos(th), r * np.sin(th)
            else:
                while True:
                    p = (domain.x[0] + (domain.x[1] - domain.x[0]) * rng.random(),
                         domain.y[0] + (domain.y[1] - domain.y[0]) * rng.random())
                    if np.hypot(*p) >= R:
                        break
                xy[k] = p
    pts = np.column_stack([t, xy])
    return Observations(pts, label_points(series, pts), BINARY)


def binary_records(obs: Observations) -> list[BinaryObservation]:
    return [BinaryObservation(float(t), float(x), float(y), int(v))
            for (t, x, y), v in zip(obs.points, obs.values)]


# -- files -----------------------------------------------------------------------

def _read_csv(path, required):
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.DictReader(lines)
    missing = set(required) - set(reader.fieldnames or ())
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return list(reader)


def read_observations_csv(path) -> Observations:
    """Read ``t,x,y,label`` (binary) or ``t,x,y,value`` (density) rows."""
    path = Path(path)
    with path.open() as fh:
        header = next(ln for ln in fh if ln.strip() and not ln.lstrip().startswith("#"))
    cols = [c.strip() for c in header.split(",")]
    kind, col = (BINARY, "label") if "label" in cols else (DENSITY, "value")
    rows = _read_csv(path, ("t", "x", "y", col))
    pts = np.array([[float(r["t"]), float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 3)
    vals = np.array([float(r[col]) for r in rows])
    return Observations(pts, vals, kind)


def write_observations_csv(obs: Observations, path, header: dict | None = None) -> Path:
    path = Path(path)
    col = "label" if obs.kind == BINARY else "value"
    with path.open("w") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}: {v}\n")
        fh.write(f"t,x,y,{col}\n")
        for (t, x, y), v in zip(obs.points.tolist(), obs.values.tolist()):
            fh.write(f"{t!r},{x!r},{y!r},{int(v) if obs.kind == BINARY else repr(v)}\n")
    return path


# -- radius extraction -------------------------------------------------------------

def _check_symmetric(values, tol):
    if values.shape[0] != values.shape[1]:
        return
    scale = max(float(np.abs(values).max()), 1e-300)
    asym = float(np.abs(values - values.T).max()) / scale
    if asym > tol:
        raise DataError(f"field is not radially symmetric (relative transpose mismatch {asym:.3g})")


def extract_radius(field, threshold: float = 0.1, check_symmetry: bool = True,
                   symmetry_tol: float = 1e-6) -> float:
    """Radius where the density first crosses ``threshold`` along the ray ``+x`` from
    the origin, linearly interpolated between nodes."""
    grid, values = field.grid, field.values
    if check_symmetry:
        _check_symmetric(values, symmetry_tol)
    if not threshold < float(values.max()):
        raise NoBoundaryError(f"threshold {threshold} is not below the field maximum {values.max():.4g}")
    xs, ys = grid.xs, grid.ys
    i0, j0 = int(np.argmin(np.abs(xs))), int(np.argmin(np.abs(ys)))
    r = xs[i0:] - xs[i0]
    d = values[i0:, j0] - threshold
    side = np.sign(d[0]) if d[0] != 0 else 1.0
    cross = np.flatnonzero(np.sign(d) * side < 0)
    if cross.size == 0:
        raise NoBoundaryError(f"density never crosses {threshold} along +x")
    k = int(cross[0])
    rest = np.sign(d[k:])
    if np.any(rest * np.sign(d[k]) < 0):
        warnings.warn("profile crosses the threshold more than once; using the first crossing",
                      stacklevel=2)
    return float(r[k - 1] + d[k - 1] / (d[k - 1] - d[k]) * (r[k] - r[k - 1]))


def ray_radii(field, threshold: float = 0.1, n_rays: int = 64, n_samples: int = 2000) -> np.ndarray:
    """Threshold radius along ``n_rays`` equally spaced directions (asymmetry diagnostic).

    Values along each ray come from bilinear interpolation of the grid; rays that
    never cross give ``nan``.
    """
    grid = field.grid
    rmax = min(grid.x[1], grid.y[1])
    s = np.linspace(0.0, rmax, n_samples)
    out = np.full(n_rays, np.nan)
    for k, th in enumerate(2 * np.pi * np.arange(n_rays) / n_rays):
        ix = (s * np.cos(th) - grid.x[0]) / grid.hx
        iy = (s * np.sin(th) - grid.y[0]) / grid.hy
        prof = map_coordinates(field.values, [ix, iy], order=1, mode="nearest") - threshold
        below = np.flatnonzero(prof < 0)
        if prof[0] >= 0 and below.size:
            j = int(below[0])
            out[k] = s[j - 1] + prof[j - 1] / (prof[j - 1] - prof[j]) * (s[j] - s[j - 1])
    return out


def relative_error(pred: float, obs: float) -> float:
    """``|pred - obs| / |obs|`` as a fraction."""
    if obs == 0:
        raise ZeroDivisionError("relative error against an observed value of 0")
    return abs(pred - obs) / abs(obs)
