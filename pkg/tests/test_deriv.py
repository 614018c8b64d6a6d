import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tumorpinn import deriv
from tumorpinn.deriv import Jet2, Var, eval_with_input_derivs
from tumorpinn.errors import ConfigurationError, NumericalError
from tumorpinn.net import CONSTANT_V, NetworkParams, PhysicalParams, forward

from conftest import linear_net, random_small_net

H = 1e-4


def fd_input_derivatives(f, p, h=H):
    """Central differences of a scalar function of (t, x, y)."""
    p = np.asarray(p, dtype=float)
    e = np.eye(3)
    grad = [(f(p + h * e[i]) - f(p - h * e[i])) / (2 * h) for i in range(3)]
    hess = [(f(p + h * e[i]) - 2 * f(p) + f(p - h * e[i])) / h**2 for i in (1, 2)]
    return np.array(grad), np.array(hess)


def rel_err(a, b, floor=1e-3):
    return np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(np.abs(b), floor))


# -- eval_with_input_derivs ---------------------------------------------------------

def test_zero_network_has_zero_jet():
    net = NetworkParams((3, 4, 1), [(np.zeros((4, 3)), np.zeros(4)), (np.zeros((1, 4)), np.zeros(1))])
    jet = eval_with_input_derivs(net, (0.3, 1.0, -2.0))
    assert jet.components() == (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


def test_linear_layer_jet():
    # u = 2x + 3t at (1, 1, 1)
    jet = eval_with_input_derivs(linear_net(w_t=3.0, w_x=2.0), (1.0, 1.0, 1.0))
    assert jet.value == 5.0
    assert jet.grad == (3.0, 2.0, 0.0)
    assert jet.hess_diag == (0.0, 0.0)


def test_abs_flips_derivatives_of_negative_raw_output():
    jet = eval_with_input_derivs(linear_net(w_x=-2.0, bias=-1.0), (0.0, 1.0, 0.0))
    assert jet.value == 3.0
    assert jet.grad == (0.0, 2.0, 0.0)


def test_abs_at_zero_uses_plus_one_subgradient():
    jet = eval_with_input_derivs(linear_net(w_x=2.0), (0.0, 0.0, 0.0))
    assert jet.value == 0.0
    assert jet.grad == (0.0, 2.0, 0.0)


@pytest.mark.parametrize("seed", range(5))
def test_random_network_matches_finite_differences(seed):
    net = random_small_net(seed)
    rng = np.random.default_rng(seed)
    p = np.array([rng.uniform(0, 1), rng.uniform(-3, 3), rng.uniform(-3, 3)])
    jet = eval_with_input_derivs(net, p)
    g, h = fd_input_derivatives(lambda q: forward(net, q), p)
    assert rel_err(jet.grad, g) < 1e-5
    assert rel_err(jet.hess_diag, h) < 1e-5
    assert jet.value == pytest.approx(forward(net, p), rel=1e-15)


def test_layer_shape_mismatch_is_configuration_error():
    with pytest.raises(ConfigurationError):
        deriv.network_jet([(np.zeros((4, 3)), np.zeros(4)), (np.zeros((1, 5)), np.zeros(1))], np.zeros((1, 3)))


def test_non_finite_point_rejected():
    with pytest.raises(ConfigurationError):
        eval_with_input_derivs(linear_net(w_x=1.0), (0.0, np.nan, 0.0))


def test_derivatives_are_bit_reproducible():
    net = random_small_net(3)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 3))
    a = deriv.eval_jets(net, pts).components()
    b = deriv.eval_jets(net, pts).components()
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_fused_tanh_matches_reference():
    rng = np.random.default_rng(5)
    A = rng.standard_normal((6, 7, 4))
    a, b = Var(A.copy(), True), Var(A.copy(), True)
    fa, fb = deriv.jet_tanh(a), deriv.jet_tanh_reference(b)
    np.testing.assert_allclose(fa.value, fb.value, rtol=1e-13, atol=1e-15)
    G = rng.standard_normal(A.shape)
    (fa * Var(G)).sum().backward()
    (fb * Var(G)).sum().backward()
    np.testing.assert_allclose(a.grad, b.grad, rtol=1e-12, atol=1e-14)


# -- Jet2 primitives -------------------------------------------------------------

PRIMITIVES = {
    "poly": (lambda t, x, y: 3 * x * x * y - 2 * t * y ** 3 + x, None),
    "div": (lambda t, x, y: (x + 2.0) / (y * y + 1.5 + t), None),
    "tanh": (lambda t, x, y: (x * y + t).tanh(), lambda t, x, y: np.tanh(x * y + t)),
    "sin": (lambda t, x, y: (x * x + y).sin(), lambda t, x, y: np.sin(x * x + y)),
    "sqrt": (lambda t, x, y: (x * x + y * y + 1.0 + t).sqrt(), lambda t, x, y: np.sqrt(x * x + y * y + 1.0 + t)),
    "log": (lambda t, x, y: (x * x + 2.0 + y).log(), lambda t, x, y: np.log(x * x + 2.0 + y)),
    "exp": (lambda t, x, y: (x * y - t).exp(), lambda t, x, y: np.exp(x * y - t)),
    "abs": (lambda t, x, y: (x - 2 * y).abs() * x, lambda t, x, y: np.abs(x - 2 * y) * x),
    "pow": (lambda t, x, y: (x + y * t) ** 4, None),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_jet_primitive_matches_finite_differences(name):
    jet_f, plain_f = PRIMITIVES[name]
    plain_f = plain_f or jet_f
    p = np.array([0.4, 0.7, -0.3])
    jet = jet_f(*Jet2.coordinates(*p))
    g, h = fd_input_derivatives(lambda q: float(plain_f(*q)), p)
    assert jet.value == pytest.approx(float(plain_f(*p)), rel=1e-14)
    assert rel_err(jet.grad, g) < 1e-5
    assert rel_err(jet.hess_diag, h) < 1e-5


def test_product_rule_is_exact_on_polynomials():
    t, x, y = Jet2.coordinates(0.5, 1.5, -2.0)
    u = x * x * y  # u_x = 2xy, u_xx = 2y, u_y = x^2, u_yy = 0
    assert u.components() == (1.5 * 1.5 * -2.0, 0.0, 2 * 1.5 * -2.0, 1.5 * 1.5, 2 * -2.0, 0.0)


def test_non_integer_power_is_rejected():
    _, x, _ = Jet2.coordinates(0.0, 1.0, 0.0)
    with pytest.raises(ConfigurationError):
        x ** 1.5


def test_unsupported_primitive_is_missing():
    _, x, _ = Jet2.coordinates(0.0, 1.0, 0.0)
    assert not hasattr(x, "cosh")


# -- reverse mode -------------------------------------------------------------------

def test_gradient_of_v_squared():
    net = linear_net()
    loss, grad = deriv.value_and_grad(lambda layers, pv: (pv * pv).sum(), net,
                                      PhysicalParams(CONSTANT_V, (3.0,)))
    assert loss == 9.0
    assert grad.wrt_physical.tolist() == [6.0]
    assert grad.wrt_network.shape == (net.n_params,)
    assert not grad.wrt_network.any()


def test_param_grad_length_equals_network_size():
    net = random_small_net(0, arch=(3, 64, 64, 64, 1))
    _, grad = deriv.value_and_grad(lambda layers, pv: deriv.network_jet(layers, np.zeros((2, 3))).value.sum(),
                                   net, PhysicalParams(CONSTANT_V, (1.0,)))
    assert grad.wrt_network.size == (3 * 64 + 64) + 2 * (64 * 64 + 64) + (64 + 1) == 8641


def test_var_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    x0 = rng.uniform(0.5, 1.5, 5)

    def f(x):
        return ((x * x).tanh() * x.sin() + (x + 1.0).log() / (x.exp() + 2.0) + x.sqrt() ** 3).sum()

    x = Var(x0.copy(), True)
    f(x).backward()
    fd = np.array([(f(Var(x0 + h)).value - f(Var(x0 - h)).value) / 2e-6
                   for h in np.eye(5) * 1e-6])
    assert rel_err(x.grad, fd) < 1e-7


def test_non_finite_loss_term_is_named():
    net = linear_net()

    def graph(layers, pv):
        return {"pde": (pv * 0.0).sum(), "data": (pv - 1.0).log().sum(), "total": pv.sum()}
    with pytest.raises(NumericalError, match="data"):
        deriv.value_and_grad(graph, net, PhysicalParams(CONSTANT_V, (0.5,)))


def test_empty_mean_is_configuration_error():
    with pytest.raises(ConfigurationError):
        Var(np.zeros(0)).mean()


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 1), st.integers(0, 10_000))
def test_jet_value_equals_forward(x, y, t, seed):
    net = random_small_net(seed % 17)
    jet = eval_with_input_derivs(net, (t, x, y))
    assert math.isclose(jet.value, forward(net, np.array([t, x, y])), rel_tol=1e-13, abs_tol=1e-15)
