"""PDE residual and the four-term composite loss for the m = 3 tumor model.

The PINN solves ``rho_t - Lap(rho^3) = g rho`` on ``[-3, 3]^2 x [0, 1]`` with
``g = v`` (constant), ``g = v1 + v2 sin(r)`` (spatial) and, in ``v_and_a``
mode, an unknown plateau height ``a`` of the initial patch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import deriv
from .deriv import Jet2, Var, lift, network_jet
from .errors import ConfigurationError, DataError, ModeError
from .net import CONSTANT_V, SPATIAL_V1V2, V_AND_A, NetworkParams, PhysicalParams

DENSITY = "density"
BINARY = "binary"
MSE = "mse"
BCE = "bce"
BCE_EPS = 1e-7
PATCH_RADIUS_SQ = 0.25


@dataclass(frozen=True)
class Domain:
    x: tuple[float, float] = (-3.0, 3.0)
    y: tuple[float, float] = (-3.0, 3.0)
    t: tuple[float, float] = (0.0, 1.0)


@dataclass
class Observations:
    """Measured points ``(t, x, y)`` with real densities or 0/1 labels."""

    points: np.ndarray
    values: np.ndarray
    kind: str = DENSITY

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if len(self.points) != len(self.values):
            raise DataError(f"{len(self.points)} points but {len(self.values)} values")
        if self.kind not in (DENSITY, BINARY):
            raise DataError(f"unknown observation kind {self.kind!r}")
        if self.kind == BINARY and not np.all((self.values == 0) | (self.values == 1)):
            raise DataError("binary observations must be labeled 0 or 1")

    def __len__(self):
        return len(self.values)

    def subset(self, idx) -> "Observations":
        return Observations(self.points[idx], self.values[idx], self.kind)


@dataclass
class CollocationConfig:
    n_interior: int = 2000
    n_edge: int = 100
    n_initial: int = 100
    n_data: int = 200
    domain: Domain = field(default_factory=Domain)

    def __post_init__(self):
        for name in ("n_interior", "n_edge", "n_initial", "n_data"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        d = self.domain
        if not (d.x[0] < d.x[1] and d.y[0] < d.y[1] and d.t[0] < d.t[1]):
            raise ConfigurationError(f"degenerate domain {d}")


@dataclass
class CollocationSet:
    interior: np.ndarray
    boundary: np.ndarray
    initial: np.ndarray
    data: Observations

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return len(self.interior), len(self.boundary), len(self.initial), len(self.data)


@dataclass(frozen=True)
class LossWeights:
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    w4: float = 1.0

    def __post_init__(self):
        w = self.as_tuple()
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise ConfigurationError(f"loss weights must be >= 0 and not all zero, got {w}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.w1, self.w2, self.w3, self.w4)


@dataclass(frozen=True)
class LossBreakdown:
    pde: float
    ic: float
    bc: float
    data: float
    total: float

    @classmethod
    def combine(cls, weights: LossWeights, pde, ic, bc, data) -> "LossBreakdown":
        pde, ic, bc, data = float(pde), float(ic), float(bc), float(data)
        total = weights.w1 * pde + weights.w2 * ic + weights.w3 * bc + weights.w4 * data
        return cls(pde, ic, bc, data, total)


def _uniform(rng, lo_hi, n):
    lo, hi = lo_hi
    return lo + (hi - lo) * rng.random(n)


def sample_collocation(config: CollocationConfig | None = None, seed: int = 0,
                       data: Observations | None = None) -> CollocationSet:
    """Uniform interior, boundary (four edges) and ``t = 0`` points, plus ``n_data``
    rows drawn without replacement from ``data``."""
    config = config or CollocationConfig()
    d = config.domain
    rng = np.random.default_rng(seed)
    n = config.n_interior
    interior = np.column_stack([_uniform(rng, d.t, n), _uniform(rng, d.x, n), _uniform(rng, d.y, n)])

    m = config.n_edge
    edges = []
    for axis, fixed in ((1, d.x[0]), (1, d.x[1]), (2, d.y[0]), (2, d.y[1])):
        pts = np.column_stack([_uniform(rng, d.t, m), _uniform(rng, d.x, m), _uniform(rng, d.y, m)])
        pts[:, axis] = fixed
        edges.append(pts)
    boundary = np.vstack(edges)

    k = config.n_initial
    initial = np.column_stack([np.zeros(k), _uniform(rng, d.x, k), _uniform(rng, d.y, k)])

    if data is None:
        if config.n_data:
            raise ConfigurationError(f"n_data = {config.n_data} but no observations were given")
        obs = Observations(np.zeros((0, 3)), np.zeros(0))
    elif len(data) == config.n_data:
        obs = data
    elif len(data) > config.n_data:
        obs = data.subset(np.sort(rng.choice(len(data), config.n_data, replace=False)))
    else:
        raise ConfigurationError(f"requested {config.n_data} data points, only {len(data)} available")
    return CollocationSet(interior, boundary, initial, obs)


def initial_density(points, height=1.0):
    """Patch initial condition: ``height`` where ``x^2 + y^2 < 0.25``, else 0."""
    p = np.asarray(points)
    inside = (p[..., 1] ** 2 + p[..., 2] ** 2 < PATCH_RADIUS_SQ).astype(float)
    return inside * height


# -- residual ------------------------------------------------------------------

def source_coefficient(mode: str, pv, x, y):
    """Growth rate ``g(x, y)`` for the given mode; ``pv`` may be an array or a Var."""
    if mode in (CONSTANT_V, V_AND_A):
        return pv[0]
    if mode == SPATIAL_V1V2:
        return pv[0] + pv[1] * np.sin(np.sqrt(np.asarray(x) ** 2 + np.asarray(y) ** 2))
    raise ModeError(f"unknown physical mode {mode!r}")


def residual_from_jet(u: Jet2, g):
    """``u_t - 6u|grad u|^2 - 3u^2 Lap u - g u`` (expanded form of ``u_t - Lap(u^3) - g u``)."""
    ux, uy = u.x, u.y
    return u.t - 6 * u.value * (ux * ux + uy * uy) - 3 * (u.value * u.value) * (u.xx + u.yy) - g * u.value


def residual_direct(u: Jet2, g):
    """Same residual with ``Lap(u^3)`` taken from the jet of ``u**3``."""
    return u.t - (u ** 3).laplacian() - g * u.value


def residual(net: NetworkParams, phys: PhysicalParams, points):
    """PDE residual of the network density at one point or an ``(n, 3)`` batch."""
    pts = np.asarray(points, dtype=float)
    batch = np.atleast_2d(pts)
    jet = deriv.eval_jets(net, batch)
    g = source_coefficient(phys.mode, phys.values, batch[:, 1], batch[:, 2])
    r = residual_from_jet(jet, g)
    return float(r[0]) if pts.ndim == 1 else r


# -- loss graph ------------------------------------------------------------------

def _dense_value(layers, points):
    z = Var(np.asarray(points, dtype=layers[0][0].value.dtype))
    for W, b in layers[:-1]:
        z = _dense(z, W, b).tanh()
    W, b = layers[-1]
    return _dense(z, W, b)[:, 0].abs()


def _dense(z: Var, W: Var, b: Var) -> Var:
    a, w = z.value, W.value

    def back(g):
        return ((g @ w) if z.requires_grad else None), g.T @ a, g.sum(axis=0)
    return deriv._node(a @ w.T + b.value, (z, W, b), back)


def _check_nonempty(name, arr):
    if len(arr) == 0:
        raise ConfigurationError(f"{name} point set is empty")


def _check_data_mode(data_mode, obs: Observations):
    if data_mode == MSE:
        if obs.kind == BINARY:
            raise ModeError("MSE data loss called with binary-labeled observations")
    elif data_mode == BCE:
        if not np.all((obs.values == 0) | (obs.values == 1)):
            raise DataError("BCE data loss needs targets in {0, 1}")
    else:
        raise ModeError(f"unknown data mode {data_mode!r}")


def loss_graph(cset: CollocationSet, mode: str, data_mode: str, weights: LossWeights,
               terms=("pde", "ic", "bc", "data")):
    """Build ``f(layers, phys_var) -> {name: Var}`` computing the requested loss terms and ``total``."""
    if "data" in terms:
        _check_data_mode(data_mode, cset.data)
    for name, arr in (("interior", cset.interior), ("boundary", cset.boundary),
                      ("initial", cset.initial), ("data", cset.data.points)):
        if {"interior": "pde", "boundary": "bc", "initial": "ic", "data": "data"}[name] in terms:
            _check_nonempty(name, arr)

    interior = cset.interior
    sin_r = np.sin(np.sqrt(interior[:, 1] ** 2 + interior[:, 2] ** 2))
    patch = initial_density(cset.initial)
    nb, ni = len(cset.boundary), len(cset.initial)
    stacked = np.vstack([cset.boundary, cset.initial, cset.data.points])
    targets = cset.data.values
    w = dict(zip(("pde", "ic", "bc", "data"), weights.as_tuple()))

    def graph(layers, pv):
        dtype = layers[0][0].value.dtype
        out = {}
        if "pde" in terms:
            u = network_jet(layers, interior)
            if mode == SPATIAL_V1V2:
                g = pv[0] + pv[1] * sin_r.astype(dtype)
            elif mode in (CONSTANT_V, V_AND_A):
                g = pv[0]
            else:
                raise ModeError(f"unknown physical mode {mode!r}")
            r = residual_from_jet(u, g)
            out["pde"] = (r * r).mean()
        if {"ic", "bc", "data"} & set(terms):
            ub = _dense_value(layers, stacked)
            if "bc" in terms:
                b = ub[:nb]
                out["bc"] = (b * b).mean()
            if "ic" in terms:
                height = pv[1] if mode == V_AND_A else 1.0
                diff = ub[nb:nb + ni] - lift(patch.astype(dtype)) * height
                out["ic"] = (diff * diff).mean()
            if "data" in terms:
                ud = ub[nb + ni:]
                y = targets.astype(dtype)
                if data_mode == MSE:
                    diff = ud - y
                    out["data"] = (diff * diff).mean()
                else:
                    p = ud.clip(BCE_EPS, 1 - BCE_EPS)
                    out["data"] = (-(y * p.log() + (1 - y) * (1 - p).log())).mean()
        total = None
        for name in ("pde", "ic", "bc", "data"):
            if name in out:
                term = out[name] * w[name]
                total = term if total is None else total + term
        out["total"] = total
        return out
    return graph


def _evaluate(net, phys, cset, terms, data_mode=MSE, weights=None):
    weights = weights or LossWeights()
    graph = loss_graph(cset, phys.mode, data_mode, weights, terms)
    layers = [(Var(W), Var(b)) for W, b in net.layers]
    out = graph(layers, Var(phys.values.astype(net.dtype)))
    return {k: float(v.value) for k, v in out.items()}


def loss_pde(net, phys, cset) -> float:
    return _evaluate(net, phys, cset, ("pde",))["pde"]


def loss_ic(net, phys, cset) -> float:
    return _evaluate(net, phys, cset, ("ic",))["ic"]


def loss_bc(net, cset) -> float:
    return _evaluate(net, PhysicalParams(CONSTANT_V, [0.0]), cset, ("bc",))["bc"]


def loss_data_mse(net, cset) -> float:
    return _evaluate(net, PhysicalParams(CONSTANT_V, [0.0]), cset, ("data",), MSE)["data"]


def loss_data_bce(net, cset) -> float:
    return _evaluate(net, PhysicalParams(CONSTANT_V, [0.0]), cset, ("data",), BCE)["data"]


def total_loss(net, phys, cset, weights: LossWeights, data_mode=MSE) -> LossBreakdown:
    v = _evaluate(net, phys, cset, ("pde", "ic", "bc", "data"), data_mode, weights)
    return LossBreakdown.combine(weights, v["pde"], v["ic"], v["bc"], v["data"])


def total_loss_and_grad(net, phys, cset, weights: LossWeights, data_mode=MSE, graph=None):
    """Loss breakdown and exact gradient with respect to network and physical parameters."""
    graph = graph or loss_graph(cset, phys.mode, data_mode, weights)
    values, grad = deriv.value_and_grad(graph, net, phys)
    return LossBreakdown.combine(weights, values["pde"], values["ic"], values["bc"], values["data"]), grad
