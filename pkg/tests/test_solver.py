import json
import math

import numpy as np
import pytest

from tumorpinn import solver
from tumorpinn.errors import ConfigurationError, DataError
from tumorpinn.net import SPATIAL_V1V2
from tumorpinn.physics import Observations
from tumorpinn.solver import DensityField, Grid2D, SolveConfig, barenblatt, solve


def test_grid_spacing_includes_boundary_nodes():
    g = Grid2D(201, 201)
    assert g.hx == pytest.approx(0.03) and g.xs[0] == -3 and g.xs[-1] == 3
    with pytest.raises(ConfigurationError):
        Grid2D(2, 5)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SolveConfig(m=1)
    with pytest.raises(ConfigurationError):
        SolveConfig(t_end=0)
    with pytest.raises(ConfigurationError):
        SolveConfig(mode=SPATIAL_V1V2, coeffs=(1.0,))


def test_zero_initial_data_stays_zero():
    g = Grid2D(41, 41)
    fields = solve(SolveConfig(coeffs=(2.0,), output_times=(0.5, 1.0)), g, np.zeros((41, 41)))
    assert [f.t for f in fields] == [0.5, 1.0]
    assert all(not f.values.any() for f in fields)


def test_initial_data_checks():
    g = Grid2D(21, 21)
    bad = np.zeros((21, 21))
    bad[0, 5] = 1.0
    with pytest.raises(ConfigurationError):
        solve(SolveConfig(), g, bad)
    neg = np.zeros((21, 21))
    neg[5, 5] = -1.0
    with pytest.raises(ConfigurationError):
        solve(SolveConfig(), g, neg)


def test_mass_conserved_without_source():
    g = Grid2D(101, 101)
    f0 = solver.patch_initial(g)
    m0 = f0.sum() * g.hx * g.hy
    fields = solve(SolveConfig(coeffs=(0.0,), output_times=(0.1, 0.3)), g)
    for f in fields:
        assert abs(f.mass() - m0) / m0 < 5e-3
        assert f.values.min() >= 0
        assert not np.concatenate([f.values[0], f.values[-1], f.values[:, 0], f.values[:, -1]]).any()


def test_constant_source_grows_mass_exponentially():
    g = Grid2D(201, 201)
    v = 1.0
    a, b = solve(SolveConfig(coeffs=(v,), output_times=(0.1, 0.3)), g)
    assert b.mass() / a.mass() == pytest.approx(math.exp(v * 0.2), rel=0.02)


def test_radially_symmetric_data_stays_symmetric():
    g = Grid2D(81, 81)
    (f,) = solve(SolveConfig(mode=SPATIAL_V1V2, coeffs=(2.0, -1.0), t_end=0.3), g)
    assert np.abs(f.values - f.values.T).max() < 1e-12
    assert np.abs(f.values - f.values[::-1, :]).max() < 1e-12


def test_barenblatt_profile_formula():
    # rho = t^(-1/3) sqrt(C - r^2 t^(-1/3) / 18) inside the support for m = 3
    t, C = 0.7, 0.4
    x, y = 0.5, -0.3
    expected = t ** (-1 / 3) * math.sqrt(C - (x * x + y * y) * t ** (-1 / 3) / 18)
    assert barenblatt(x, y, t, C) == pytest.approx(expected, rel=1e-14)
    assert barenblatt(3.0, 0.0, t, C) == 0.0


def test_barenblatt_evolution_on_coarse_grid():
    g = Grid2D(101, 101)
    X, Y = g.mesh()
    t0, t1, C = 0.1, 0.3, 0.25
    rho0 = barenblatt(X, Y, t0, C)
    (f,) = solve(SolveConfig(coeffs=(0.0,), t_end=t1 - t0), g, rho0)
    exact = barenblatt(X, Y, t1, C)
    l1 = np.abs(f.values - exact).sum() * g.hx * g.hy
    mass = exact.sum() * g.hx * g.hy
    assert l1 / mass < 0.02
    assert f.clipped_mass < 1e-6 * mass


def test_sampling_at_nodes_is_exact():
    g = Grid2D(31, 31)
    rng = np.random.default_rng(0)
    f = DensityField(g, 0.5, rng.random((31, 31)))
    i, j = 7, 19
    assert solver.sample_fields([f], [[0.5, g.xs[i], g.ys[j]]])[0] == f.values[i, j]


def test_sampling_unknown_time():
    g = Grid2D(11, 11)
    with pytest.raises(DataError):
        solver.sample_fields([DensityField(g, 0.5, np.zeros((11, 11)))], [[0.25, 0.0, 0.0]])


def test_synthetic_dataset_rows():
    g = Grid2D(61, 61)
    cfg = SolveConfig(coeffs=(2.0,), output_times=(0.0, 0.5, 1.0))
    obs = solver.synthetic_dataset(cfg, g, n_points=200, seed=4)
    assert len(obs) == 200 and obs.values.min() >= 0
    assert set(np.unique(obs.points[:, 0])) <= {0.0, 0.5, 1.0}
    again = solver.synthetic_dataset(cfg, g, n_points=200, seed=4)
    assert np.array_equal(obs.values, again.values)


def _clean(n):
    rng = np.random.default_rng(1)
    return Observations(rng.random((n, 3)), rng.random(n))


def test_zero_noise_is_identity():
    obs = _clean(100)
    assert np.array_equal(solver.add_noise(obs, 0.0, 0.5, 3).values, obs.values)


def test_noise_statistics():
    obs = _clean(100_000)
    eps, sigma = 0.5, 0.2
    noisy = solver.add_noise(obs, eps, sigma, seed=11)
    d = noisy.values - obs.values
    assert abs(d.mean()) < 3 * sigma * eps / math.sqrt(1e5)
    assert d.std() == pytest.approx(eps * sigma, rel=0.02)
    assert np.array_equal(noisy.values, solver.add_noise(obs, eps, sigma, seed=11).values)


def test_noise_is_not_clipped():
    obs = Observations(np.zeros((1000, 3)), np.zeros(1000))
    assert solver.add_noise(obs, 5.0, 0.2, 0).values.min() < 0


def test_snapshot_binary_roundtrip(tmp_path):
    g = Grid2D(21, 31)
    f = DensityField(g, 0.375, np.random.default_rng(2).random((21, 31)))
    path = solver.write_snapshot_binary(f, tmp_path / "s.f64", SolveConfig(coeffs=(3.0,)), {"tool": "x"})
    back = solver.read_snapshot_binary(path)
    assert back.grid == g and back.t == 0.375 and np.array_equal(back.values, f.values)
    meta = json.loads((tmp_path / "s.f64.json").read_text())
    assert meta["m"] == 3 and meta["coeffs"] == [3.0] and meta["tool"] == "x"


def test_snapshot_csv(tmp_path):
    g = Grid2D(5, 5)
    f = DensityField(g, 1.0, np.arange(25.0).reshape(5, 5))
    path = solver.write_snapshot_csv(f, tmp_path / "s.csv")
    lines = path.read_text().splitlines()
    data = [ln for ln in lines if not ln.startswith("#")]
    assert data[0] == "x,y,value" and len(data) == 26
    assert lines[0].startswith("# grid:")
