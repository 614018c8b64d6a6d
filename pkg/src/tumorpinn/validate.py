"""Fast self-checks of the numerical core, run by ``tumorpinn validate``."""

from __future__ import annotations

import numpy as np

from . import deriv, physics, solver
from .net import CONSTANT_V, SPATIAL_V1V2, V_AND_A, NetworkParams, PhysicalParams, forward, init_xavier

SMALL_ARCH = (3, 8, 8, 1)


def _random_net(rng, arch=SMALL_ARCH) -> NetworkParams:
    net = init_xavier(arch, int(rng.integers(2**31)))
    layers = [(W, 0.3 * rng.standard_normal(b.shape)) for W, b in net.layers]
    return NetworkParams(arch, layers)


def _fd_input_derivs(net, p, h=1e-4):
    def f(q):
        return float(forward(net, q))
    e = np.eye(3)
    first = [(f(p + h * e[i]) - f(p - h * e[i])) / (2 * h) for i in range(3)]
    second = [(f(p + h * e[i]) - 2 * f(p) + f(p - h * e[i])) / h**2 for i in (1, 2)]
    return np.array(first), np.array(second)


def _rel(a, b, floor):
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


def check_input_derivatives(rng, n_nets=10, tol=1e-5) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(n_nets):
        net = _random_net(rng)
        p = np.array([rng.uniform(0, 1), rng.uniform(-3, 3), rng.uniform(-3, 3)])
        jet = deriv.eval_with_input_derivs(net, p)
        g, h = _fd_input_derivs(net, p)
        worst = max(worst, _rel(np.array(jet.grad), g, 1e-3).max(), _rel(np.array(jet.hess_diag), h, 1e-3).max())
    return worst < tol, f"max relative deviation {worst:.2e}"


def check_param_gradient(rng, tol=1e-4) -> tuple[bool, str]:
    net = _random_net(rng)
    phys = PhysicalParams(CONSTANT_V, (1.3,))
    cfg = physics.CollocationConfig(n_interior=10, n_edge=3, n_initial=5, n_data=4)
    obs = physics.Observations(rng.uniform([0, -3, -3], [1, 3, 3], (4, 3)), rng.uniform(0, 1, 4))
    cset = physics.sample_collocation(cfg, int(rng.integers(1000)), obs)
    w = physics.LossWeights(1.0, 1.0, 1.0, 1.0)
    _, grad = physics.total_loss_and_grad(net, phys, cset, w)
    flat = np.concatenate([net.flatten(), phys.values])
    n = net.n_params

    def loss(v):
        return physics.total_loss(NetworkParams.from_flat(SMALL_ARCH, v[:n]), PhysicalParams(CONSTANT_V, v[n:]),
                                  cset, w).total
    h, fd = 1e-5, np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        fd[i] = (loss(flat + e) - loss(flat - e)) / (2 * h)
    err = _rel(grad.flat(), fd, 1e-3).max()
    return err < tol, f"max relative deviation {err:.2e} over {flat.size} parameters"


def check_residual_identity(rng, tol=1e-10) -> tuple[bool, str]:
    net = _random_net(rng)
    pts = rng.uniform([0, -3, -3], [1, 3, 3], (200, 3))
    jet = deriv.eval_jets(net, pts)
    a = physics.residual_from_jet(jet, 1.7)
    b = physics.residual_direct(jet, 1.7)
    err = float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-12)))
    return err < tol, f"max relative difference {err:.2e}"


def check_spatial_reduction(rng) -> tuple[bool, str]:
    net = _random_net(rng)
    pts = rng.uniform([0, -3, -3], [1, 3, 3], (50, 3))
    a = physics.residual(net, PhysicalParams(SPATIAL_V1V2, (2.5, 0.0)), pts)
    b = physics.residual(net, PhysicalParams(CONSTANT_V, (2.5,)), pts)
    c = physics.residual(net, PhysicalParams(V_AND_A, (2.5, 0.4)), pts)
    ok = np.array_equal(a, b) and np.array_equal(b, c)
    return ok, "identical" if ok else f"max difference {np.abs(a - b).max():.2e}"


def check_solver_symmetry_and_mass() -> tuple[bool, str]:
    grid = solver.Grid2D(61, 61)
    fields = solver.solve(solver.SolveConfig(coeffs=(0.0,), t_end=0.05), grid)
    rho = fields[-1].values
    asym = float(np.abs(rho - rho.T).max())
    m0 = float(solver.patch_initial(grid).sum() * grid.hx * grid.hy)
    drift = abs(fields[-1].mass() - m0) / m0
    return asym < 1e-12 and drift < 5e-3, f"asymmetry {asym:.1e}, mass drift {100 * drift:.3f}%"


def run_all(seed: int = 0, verbose: bool = False) -> bool:
    rng = np.random.default_rng(seed)
    checks = [
        ("input derivatives vs finite differences", lambda: check_input_derivatives(rng)),
        ("parameter gradient vs finite differences", lambda: check_param_gradient(rng)),
        ("expanded residual identity", lambda: check_residual_identity(rng)),
        ("spatial mode reduces to constant rate", lambda: check_spatial_reduction(rng)),
        ("solver symmetry and mass", check_solver_symmetry_and_mass),
    ]
    ok_all = True
    for name, fn in checks:
        ok, detail = fn()
        ok_all &= ok
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok_all
