import math
import warnings

import numpy as np
import pytest

from tumorpinn import obsdata
from tumorpinn.errors import DataError, NoBoundaryError
from tumorpinn.obsdata import RadiusSeries, builtin_radius_table, extract_radius, make_binary_dataset, relative_error
from tumorpinn.physics import BINARY
from tumorpinn.solver import DensityField, Grid2D, patch_initial


@pytest.mark.parametrize("t,r", [(0.25, 0.66), (1.0, 2.5), (0.625, 1.48), (0.375, 0.97), (0.875, 2.13)])
def test_builtin_table(t, r):
    assert builtin_radius_table().radius_at(t) == r


def test_table_has_seven_entries_and_initial_radius():
    s = builtin_radius_table()
    assert len(s.entries) == 7
    assert s.radius_at(0.0) == 0.5


def test_series_validation():
    with pytest.raises(DataError):
        RadiusSeries(((0.5, 1.0), (0.25, 0.7)))
    with pytest.raises(DataError):
        RadiusSeries(((0.5, -1.0),))
    with pytest.raises(DataError):
        RadiusSeries(((1.5, 1.0),))


def test_labels_follow_disc_rule():
    s = builtin_radius_table()
    labels = obsdata.label_points(s, [[0.25, 0.0, 0.0], [0.25, 2.9, 0.0], [0.25, 0.66, 0.0], [0.5, 0.8, 0.8]])
    assert labels.tolist() == [1.0, 0.0, 0.0, 1.0]


def test_label_fraction_matches_area_ratio():
    obs = make_binary_dataset(builtin_radius_table(), [0.5], n_points=100_000, seed=3)
    expected = math.pi * 1.26**2 / 36
    assert expected == pytest.approx(0.1386, abs=1e-4)
    se = math.sqrt(expected * (1 - expected) / 1e5)
    assert abs(obs.values.mean() - expected) < 4 * se


def test_binary_dataset_shape_and_determinism():
    s = builtin_radius_table()
    a = make_binary_dataset(s, [0.0, 0.25, 0.375, 0.5], 200, seed=9)
    b = make_binary_dataset(s, [0.0, 0.25, 0.375, 0.5], 200, seed=9)
    assert a.kind == BINARY and len(a) == 200
    assert np.array_equal(a.points, b.points) and np.array_equal(a.values, b.values)
    assert set(np.unique(a.points[:, 0])) <= {0.0, 0.25, 0.375, 0.5}
    assert np.abs(a.points[:, 1:]).max() <= 3
    recs = obsdata.binary_records(a)
    assert recs[0].label in (0, 1) and len(recs) == 200


def test_balanced_dataset_has_half_positive():
    obs = make_binary_dataset(builtin_radius_table(), [0.25, 0.5], 200, seed=1, balanced=True)
    assert obs.values.sum() == 100


def test_absent_time_is_data_error():
    with pytest.raises(DataError):
        make_binary_dataset(builtin_radius_table(), [0.3], 10, 0)


def test_label_rule_is_scale_consistent():
    s = builtin_radius_table()
    k = 0.5
    scaled = RadiusSeries(tuple((t, k * r) for t, r in s.entries))
    pts = np.random.default_rng(0).uniform([0, -3, -3], [1, 3, 3], (500, 3))
    pts[:, 0] = np.random.default_rng(1).choice(s.times, 500)
    small = pts.copy()
    small[:, 1:] *= k
    assert np.array_equal(obsdata.label_points(s, pts), obsdata.label_points(scaled, small))


def test_observation_csv_roundtrip(tmp_path):
    obs = make_binary_dataset(builtin_radius_table(), [0.25], 20, 0)
    path = obsdata.write_observations_csv(obs, tmp_path / "o.csv", {"tool": "t"})
    back = obsdata.read_observations_csv(path)
    assert back.kind == BINARY and np.array_equal(back.points, obs.points) and np.array_equal(back.values, obs.values)


def test_radius_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("# measured\nt,radius\n0.25,0.66\n0.5,1.26\n")
    assert obsdata.read_radius_csv(p).entries == ((0.25, 0.66), (0.5, 1.26))
    (tmp_path / "bad.csv").write_text("t,r\n0.1,1\n")
    with pytest.raises(DataError):
        obsdata.read_radius_csv(tmp_path / "bad.csv")


# -- radius extraction ------------------------------------------------------------

def test_plateau_radius_within_one_cell():
    g = Grid2D(201, 201)
    r = extract_radius(DensityField(g, 0.0, patch_initial(g)), 0.1)
    assert abs(r - 0.5) <= g.hx


def test_linear_profile_interpolation():
    g = Grid2D(61, 61)
    X, Y = g.mesh()
    f = DensityField(g, 0.0, np.maximum(1.0 - np.hypot(X, Y) / 2.0, 0.0))
    assert extract_radius(f, 0.1) == pytest.approx(1.8, abs=1e-12)


def test_threshold_above_maximum():
    g = Grid2D(41, 41)
    with pytest.raises(NoBoundaryError):
        extract_radius(DensityField(g, 0.0, patch_initial(g)), 1.5)


def test_no_crossing():
    g = Grid2D(41, 41)
    X, _ = g.mesh()
    vals = np.ones((41, 41))
    with pytest.raises(NoBoundaryError):
        extract_radius(DensityField(g, 0.0, vals), 0.5, check_symmetry=False)


def test_multiple_crossings_warn_and_use_first():
    g = Grid2D(121, 121)
    X, Y = g.mesh()
    r = np.hypot(X, Y)
    vals = np.where(r < 0.5, 1.0, 0.0) + np.where((r > 1.5) & (r < 2.0), 1.0, 0.0)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        rad = extract_radius(DensityField(g, 0.0, vals), 0.1)
    assert abs(rad - 0.5) <= g.hx
    assert any("more than once" in str(x.message) for x in w)


def test_asymmetric_field_rejected():
    g = Grid2D(41, 41)
    X, Y = g.mesh()
    vals = np.maximum(1.0 - np.hypot(X / 2, Y), 0.0)
    with pytest.raises(DataError):
        extract_radius(DensityField(g, 0.0, vals), 0.1)


def test_ray_radii_isotropic_on_disc():
    g = Grid2D(201, 201)
    radii = obsdata.ray_radii(DensityField(g, 0.0, patch_initial(g)), 0.1, n_rays=16)
    assert np.all(np.abs(radii - 0.5) <= 2 * g.hx)


@pytest.mark.parametrize("pred,obs,pct", [(2.2308, 2.13, 4.732), (2.4426, 2.5, 2.296)])
def test_relative_error_rows(pred, obs, pct):
    assert 100 * relative_error(pred, obs) == pytest.approx(pct, abs=1e-3)


def test_relative_error_identity_and_zero():
    assert relative_error(1.7, 1.7) == 0.0
    with pytest.raises(ZeroDivisionError):
        relative_error(1.0, 0.0)
