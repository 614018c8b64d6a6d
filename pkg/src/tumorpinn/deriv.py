"""Second-order input jets with reverse accumulation for parameter gradients.

Input derivatives (u_t, u_x, u_y, u_xx, u_yy) are pushed forward through the
network as jets; every jet component is a :class:`Var` node on a small
reverse-mode tape, so the gradient of any scalar loss built from jets with
respect to the weights and physical parameters is exact (reverse-over-forward).

Jets support the primitives ``+ - * /``, ``tanh``, ``abs``, integer powers,
``sin``, ``sqrt``, ``log`` and ``exp``. Anything else raises
:class:`~tumorpinn.errors.ConfigurationError`.

Batched network jets are stored as ``(6, n, width)`` arrays with channels
``value, d/dt, d/dx, d/dy, d2/dx2, d2/dy2``.
"""

from __future__ import annotations

import numbers
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConfigurationError, NumericalError
from .net import NetworkParams, PhysicalParams

N_CHANNELS = 6
VAL, DT, DX, DY, DXX, DYY = range(N_CHANNELS)


def _sign(a):
    # abs subgradient convention: sign(0) = +1
    return np.where(a >= 0, 1.0, -1.0).astype(a.dtype, copy=False)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Var:
    """Node of a reverse-mode tape holding a numpy array."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")
    __array_ufunc__ = None  # ndarray (op) Var defers to Var

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None):
        self.value = value if isinstance(value, np.ndarray) else np.asarray(value)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    def __repr__(self):
        return f"Var({self.value!r}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic ----------------------------------------------------------
    # Python scalars stay scalars so float32 tapes are not promoted.
    def __add__(self, other):
        if isinstance(other, numbers.Number):
            return _node(self.value + other, (self,), lambda g: (g,))
        other = lift(other)
        return _node(self.value + other.value, (self, other),
                     lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, numbers.Number):
            return _node(self.value - other, (self,), lambda g: (g,))
        other = lift(other)
        return _node(self.value - other.value, (self, other),
                     lambda g: (_unbroadcast(g, self.shape), _unbroadcast(-g, other.shape)))

    def __rsub__(self, other):
        if isinstance(other, numbers.Number):
            return _node(other - self.value, (self,), lambda g: (-g,))
        return lift(other) - self

    def __mul__(self, other):
        if isinstance(other, numbers.Number):
            return _node(self.value * other, (self,), lambda g: (g * other,))
        other = lift(other)
        a, b = self.value, other.value
        return _node(a * b, (self, other),
                     lambda g: (_unbroadcast(g * b, self.shape), _unbroadcast(g * a, other.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, numbers.Number):
            return _node(self.value / other, (self,), lambda g: (g / other,))
        other = lift(other)
        a, b = self.value, other.value
        q = a / b
        return _node(q, (self, other),
                     lambda g: (_unbroadcast(g / b, self.shape), _unbroadcast(-g * q / b, other.shape)))

    def __rtruediv__(self, other):
        if isinstance(other, numbers.Number):
            q = other / self.value
            return _node(q, (self,), lambda g: (-g * q / self.value,))
        return lift(other) / self

    def __neg__(self):
        return _node(-self.value, (self,), lambda g: (-g,))

    def __pow__(self, n):
        n = _int_exponent(n)
        a = self.value
        if n == 0:
            return Var(np.ones_like(a))
        if n == 1:
            return self
        return _node(a ** n, (self,), lambda g: (g * n * a ** (n - 1),))

    def __getitem__(self, idx):
        a = self.value

        def back(g):
            out = np.zeros_like(a)
            out[idx] = g
            return (out,)
        return _node(a[idx], (self,), back)

    # -- elementwise primitives ---------------------------------------------
    def tanh(self):
        z = np.tanh(self.value)
        return _node(z, (self,), lambda g: (g * (1 - z * z),))

    def abs(self):
        s = _sign(self.value)
        return _node(np.abs(self.value), (self,), lambda g: (g * s,))

    def sin(self):
        a = self.value
        return _node(np.sin(a), (self,), lambda g: (g * np.cos(a),))

    def cos(self):
        a = self.value
        return _node(np.cos(a), (self,), lambda g: (-g * np.sin(a),))

    def sqrt(self):
        r = np.sqrt(self.value)
        return _node(r, (self,), lambda g: (g * 0.5 / r,))

    def log(self):
        a = self.value
        return _node(np.log(a), (self,), lambda g: (g / a,))

    def exp(self):
        e = np.exp(self.value)
        return _node(e, (self,), lambda g: (g * e,))

    def clip(self, lo, hi):
        a = self.value
        mask = (a >= lo) & (a <= hi)
        return _node(np.clip(a, lo, hi), (self,), lambda g: (g * mask,))

    # -- reductions ----------------------------------------------------------
    def sum(self):
        a = self.value
        return _node(a.sum(), (self,), lambda g: (np.broadcast_to(g, a.shape).copy(),))

    def mean(self):
        a = self.value
        if a.size == 0:
            raise ConfigurationError("mean over an empty set")
        return _node(a.mean(), (self,), lambda g: (np.full(a.shape, g / a.size, dtype=a.dtype),))

    # -- backward ------------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every leaf that requires grad."""
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.value) if seed is None else np.asarray(seed)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.backward_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _node(value, parents, backward_fn) -> Var:
    if any(p.requires_grad for p in parents):
        return Var(value, True, parents, backward_fn)
    return Var(value)


def _topo_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _int_exponent(n) -> int:
    if isinstance(n, numbers.Integral) or (isinstance(n, float) and n.is_integer()):
        return int(n)
    raise ConfigurationError(f"only integer powers are supported, got exponent {n!r}")


# -- dispatch helpers so jets work over floats, arrays and Vars alike --------

def _ew(name, x):
    if isinstance(x, (Var, Jet2)):
        return getattr(x, name)()
    if name == "abs":
        return np.abs(x)
    return getattr(np, name)(x)


def tanh(x):
    return _ew("tanh", x)


def sin(x):
    return _ew("sin", x)


def sqrt(x):
    return _ew("sqrt", x)


def log(x):
    return _ew("log", x)


def exp(x):
    return _ew("exp", x)


def absolute(x):
    return _ew("abs", x)


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x)


# -- Jet2 ----------------------------------------------------------------------

class Jet2:
    """A quantity with its derivatives in t, x, y and second derivatives in x, y.

    Components can be floats, numpy arrays (one entry per point) or :class:`Var`.
    """

    __slots__ = ("value", "grad", "hess_diag")

    def __init__(self, value, grad, hess_diag):
        self.value = value
        self.grad = tuple(grad)
        self.hess_diag = tuple(hess_diag)
        if len(self.grad) != 3 or len(self.hess_diag) != 2:
            raise ConfigurationError("Jet2 needs 3 first and 2 second derivatives")

    def __repr__(self):
        return f"Jet2(value={self.value!r}, grad={self.grad!r}, hess_diag={self.hess_diag!r})"

    @classmethod
    def constant(cls, c):
        return cls(c, (0.0, 0.0, 0.0), (0.0, 0.0))

    @classmethod
    def coordinates(cls, t, x, y):
        """Jets of the input coordinates themselves."""
        zero, one = np.zeros_like(np.asarray(t, dtype=float)), np.ones_like(np.asarray(t, dtype=float))
        return (cls(t, (one, zero, zero), (zero, zero)),
                cls(x, (zero, one, zero), (zero, zero)),
                cls(y, (zero, zero, one), (zero, zero)))

    @property
    def t(self):
        return self.grad[0]

    @property
    def x(self):
        return self.grad[1]

    @property
    def y(self):
        return self.grad[2]

    @property
    def xx(self):
        return self.hess_diag[0]

    @property
    def yy(self):
        return self.hess_diag[1]

    def laplacian(self):
        return self.hess_diag[0] + self.hess_diag[1]

    def _chain(self, f0, f1, f2):
        gx, gy = self.grad[1], self.grad[2]
        return Jet2(f0, tuple(f1 * d for d in self.grad),
                    (f1 * self.hess_diag[0] + f2 * (gx * gx), f1 * self.hess_diag[1] + f2 * (gy * gy)))

    def __add__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.value + other, self.grad, self.hess_diag)
        return Jet2(self.value + other.value,
                    tuple(a + b for a, b in zip(self.grad, other.grad)),
                    tuple(a + b for a, b in zip(self.hess_diag, other.hess_diag)))

    __radd__ = __add__

    def __neg__(self):
        return Jet2(-self.value, tuple(-a for a in self.grad), tuple(-a for a in self.hess_diag))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            return Jet2(self.value * other, tuple(a * other for a in self.grad),
                        tuple(a * other for a in self.hess_diag))
        u, v = self, other
        return Jet2(u.value * v.value,
                    tuple(du * v.value + u.value * dv for du, dv in zip(u.grad, v.grad)),
                    tuple(uh * v.value + 2 * (u.grad[k] * v.grad[k]) + u.value * vh
                          for k, uh, vh in zip((1, 2), u.hess_diag, v.hess_diag)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet2):
            return self * (1.0 / other)
        u, v = self, other
        q = u.value / v.value
        grad = tuple((du - q * dv) / v.value for du, dv in zip(u.grad, v.grad))
        hess = tuple((uh - 2 * (grad[k] * v.grad[k]) - q * vh) / v.value
                     for k, uh, vh in zip((1, 2), u.hess_diag, v.hess_diag))
        return Jet2(q, grad, hess)

    def __rtruediv__(self, other):
        return Jet2.constant(other) / self

    def __pow__(self, n):
        n = _int_exponent(n)
        if n == 0:
            return Jet2.constant(1.0)
        if n == 1:
            return self
        u = self.value
        return self._chain(u ** n, n * u ** (n - 1), (n * (n - 1)) * u ** (n - 2) if n != 2 else 2.0)

    def tanh(self):
        z = tanh(self.value)
        s = 1 - z * z
        return self._chain(z, s, -2 * z * s)

    def abs(self):
        s = _sign(_value(self.value))
        return self._chain(absolute(self.value), s, 0.0)

    def sin(self):
        u = self.value
        sn = sin(u)
        cs = u.cos() if isinstance(u, Var) else np.cos(u)
        return self._chain(sn, cs, -sn)

    def sqrt(self):
        r = sqrt(self.value)
        d1 = 0.5 / r
        return self._chain(r, d1, -0.5 * d1 / self.value)

    def log(self):
        u = self.value
        return self._chain(log(u), 1.0 / u, -1.0 / (u * u))

    def exp(self):
        e = exp(self.value)
        return self._chain(e, e, e)

    def components(self):
        """``(value, u_t, u_x, u_y, u_xx, u_yy)``."""
        return (self.value, *self.grad, *self.hess_diag)


# -- fused network jet operations ------------------------------------------------

def jet_affine(J, W: Var, b: Var) -> Var:
    """``W @ z + b`` on every channel of a ``(6, n, k)`` jet; bias only on the value channel."""
    J = lift(J)
    a, w = J.value, W.value
    c, n, k = a.shape
    a2 = a.reshape(c * n, k)
    out = (a2 @ w.T).reshape(c, n, w.shape[0])
    out[VAL] += b.value

    def back(g):
        g2 = g.reshape(c * n, -1)
        dW = g2.T @ a2
        db = g[VAL].sum(axis=0)
        dJ = (g2 @ w).reshape(a.shape) if J.requires_grad else None
        return dJ, dW, db
    return _node(out, (J, W, b), back)


def jet_tanh(A: Var) -> Var:
    """Elementwise tanh of a ``(6, n, k)`` jet (chain rule up to second order)."""
    a = np.ascontiguousarray(A.value)
    out, z, s = _kernels.tanh_jet(a)
    return _node(out, (A,), lambda g: (_kernels.tanh_jet_grad(a, z, s, g),))


def jet_tanh_reference(A: Var) -> Var:
    """Pure numpy twin of :func:`jet_tanh`, kept for cross-checking the fused kernel."""
    a = A.value
    z = np.tanh(a[VAL])
    s = 1 - z * z
    f2 = -2 * z * s
    out = np.empty_like(a)
    out[VAL] = z
    out[DT:DY + 1] = s * a[DT:DY + 1]
    out[DXX] = s * a[DXX] + f2 * (a[DX] * a[DX])
    out[DYY] = s * a[DYY] + f2 * (a[DY] * a[DY])

    def back(g):
        da = np.empty_like(a)
        da[DT:] = g[DT:] * s
        da[DX] += 2 * g[DXX] * f2 * a[DX]
        da[DY] += 2 * g[DYY] * f2 * a[DY]
        gs = (g[DT] * a[DT] + g[DX] * a[DX] + g[DY] * a[DY]
              + g[DXX] * a[DXX] + g[DYY] * a[DYY])
        gf2 = g[DXX] * (a[DX] * a[DX]) + g[DYY] * (a[DY] * a[DY])
        gz = g[VAL] - 2 * z * gs + (6 * z * z - 2) * gf2
        da[VAL] = gz * s
        return (da,)
    return _node(out, (A,), back)


def jet_abs(A: Var) -> Var:
    a = A.value
    s = _sign(a[VAL])
    return _node(a * s, (A,), lambda g: (g * s,))


def input_jet(points, dtype=np.float64) -> np.ndarray:
    """Seed jet ``(6, n, 3)`` for input points ``(t, x, y)``."""
    points = np.asarray(points, dtype=dtype)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ConfigurationError(f"points must have shape (n, 3), got {points.shape}")
    n = points.shape[0]
    J = np.zeros((N_CHANNELS, n, 3), dtype=dtype)
    J[VAL] = points
    J[DT, :, 0] = 1
    J[DX, :, 1] = 1
    J[DY, :, 2] = 1
    return J


def _check_layers(layers):
    width = 3
    for i, (W, b) in enumerate(layers):
        w, bb = _value(W), _value(b)
        if w.ndim != 2 or w.shape[1] != width or bb.shape != (w.shape[0],):
            raise ConfigurationError(
                f"layer {i}: weight {w.shape} / bias {bb.shape} do not follow width {width}")
        width = w.shape[0]
    if width != 1:
        raise ConfigurationError(f"network output width must be 1, got {width}")


def network_jet(layers, points) -> Jet2:
    """Jet of ``u = |MLP(t, x, y)|`` at a batch of points.

    ``layers`` is a sequence of ``(W, b)`` pairs given as arrays or Vars; the
    returned jet components are Vars of shape ``(n,)``.
    """
    _check_layers(layers)
    layers = [(lift(W), lift(b)) for W, b in layers]
    J = Var(input_jet(points, dtype=layers[0][0].value.dtype))
    for W, b in layers[:-1]:
        J = jet_tanh(jet_affine(J, W, b))
    W, b = layers[-1]
    out = jet_abs(jet_affine(J, W, b))
    comp = [out[c, :, 0] for c in range(N_CHANNELS)]
    return Jet2(comp[VAL], comp[DT:DY + 1], comp[DXX:])


def eval_jets(net: NetworkParams, points) -> Jet2:
    """Batched :func:`eval_with_input_derivs`; components are plain arrays."""
    jet = network_jet(net.layers, points)
    return Jet2(jet.value.value, [g.value for g in jet.grad], [h.value for h in jet.hess_diag])


def eval_with_input_derivs(net: NetworkParams, point) -> Jet2:
    """Value, (u_t, u_x, u_y) and (u_xx, u_yy) of the network density at ``(t, x, y)``."""
    point = np.asarray(point, dtype=float)
    if point.shape != (3,) or not np.all(np.isfinite(point)):
        raise ConfigurationError(f"point must be 3 finite coordinates, got {point!r}")
    jet = eval_jets(net, point[None, :])
    return Jet2(float(jet.value[0]), [float(g[0]) for g in jet.grad], [float(h[0]) for h in jet.hess_diag])


# -- parameter gradients -----------------------------------------------------------

@dataclass
class ParamGrad:
    wrt_network: np.ndarray
    wrt_physical: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.wrt_network, self.wrt_physical.astype(self.wrt_network.dtype)])


def leaf_vars(net: NetworkParams, phys: PhysicalParams):
    layers = [(Var(W.copy(), True), Var(b.copy(), True)) for W, b in net.layers]
    return layers, Var(phys.values.astype(net.dtype), True)


def value_and_grad(loss_graph, net: NetworkParams, phys: PhysicalParams):
    """Evaluate ``loss_graph(layers, phys_var)`` and its exact gradient.

    ``loss_graph`` returns either a scalar Var or a mapping of named scalar
    Vars that includes ``"total"``; the first non-finite entry is reported by
    name. Returns ``(values, ParamGrad)`` where ``values`` mirrors the output.
    """
    layers, pv = leaf_vars(net, phys)
    out = loss_graph(layers, pv)
    terms = dict(out) if isinstance(out, Mapping) else {"loss": out}
    loss = terms.get("total", terms.get("loss"))
    if loss is None:
        raise ConfigurationError("loss graph mapping must contain 'total'")
    for name, term in terms.items():
        if not np.all(np.isfinite(_value(term))):
            raise NumericalError(f"loss term {name!r} is not finite ({_value(term)!r})")
    if np.ndim(loss.value) != 0:
        raise ConfigurationError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.requires_grad:
        loss.backward()
    gnet = []
    for (W, b), (W0, b0) in zip(layers, net.layers):
        gnet.append(np.zeros_like(W0).ravel() if W.grad is None else W.grad.ravel())
        gnet.append(np.zeros_like(b0) if b.grad is None else b.grad)
    grad = ParamGrad(np.concatenate(gnet), np.zeros_like(pv.value) if pv.grad is None else pv.grad)
    if not np.all(np.isfinite(grad.wrt_network)) or not np.all(np.isfinite(grad.wrt_physical)):
        raise NumericalError("parameter gradient is not finite")
    values = {k: float(_value(v)) for k, v in terms.items()}
    return (values if isinstance(out, Mapping) else values["loss"]), grad


def loss_param_gradient(loss_graph, net: NetworkParams, phys: PhysicalParams) -> ParamGrad:
    """Exact gradient of a scalar loss graph with respect to every trainable scalar."""
    return value_and_grad(loss_graph, net, phys)[1]
