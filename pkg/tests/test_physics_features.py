import math

import numpy as np
import pytest

from errors import DegenerateFeatureError, DomainError
from physics_features import (ALL_FEATURES, SELECTED_FEATURES, FeatureVector, RawGeometry, compute_all_features,
                              feature_audit, features_for, fit_standardizer, inverse_transform, target_log,
                              target_log_inverse, transform)


def test_unit_cube_descriptors():
    feats = compute_all_features(RawGeometry(1.0, 1.0, 1.0, 1.0, 1.0))
    assert len(feats) == 15
    assert feats["sphericity"] == pytest.approx(0.80600, abs=1e-5)
    assert feats["log_volume"] == pytest.approx(math.log(2.0))
    assert feats["compactness"] == pytest.approx(1.0)
    assert feats["elongation"] == pytest.approx(1.0)
    assert feats["log_vol_surf"] == pytest.approx(math.log1p(1.0 / 6.0))
    assert feats["log_dist"] == pytest.approx(math.log(1.0 + math.sqrt(2.0)))
    assert feats["surf_sphere"] == pytest.approx(math.log(7.0) * feats["sphericity"])


def test_box_ratios():
    feats = compute_all_features(RawGeometry(2.0, 4.0, 8.0, 3.0, 4.0))
    assert feats["compactness"] == pytest.approx(0.25)
    assert feats["elongation"] == pytest.approx(2.0)
    assert feats["flatness"] == pytest.approx(0.5)
    assert feats["aspect_xy"] == pytest.approx(0.5)
    assert feats["aspect_yz"] == pytest.approx(0.5)
    assert feats["log_dist"] == pytest.approx(math.log(6.0))


def test_shape_features_are_scale_invariant():
    base = compute_all_features(RawGeometry(3.0, 5.0, 7.0, 50.0, 40.0))
    scaled = compute_all_features(RawGeometry(3.0, 5.0, 7.0, 50.0, 40.0).scaled(3.5))
    for name in ("compactness", "elongation", "aspect_xy", "aspect_yz", "sphericity", "flatness"):
        assert scaled[name] == pytest.approx(base[name])


@pytest.mark.parametrize("geometry", [
    RawGeometry(0.0, 1.0, 1.0, 1.0, 1.0),
    RawGeometry(1.0, -2.0, 1.0, 1.0, 1.0),
    RawGeometry(1.0, 1.0, 1.0, 1.0, float("nan")),
])
def test_non_positive_geometry_rejected(geometry):
    with pytest.raises(DomainError):
        compute_all_features(geometry)


def test_selection_order():
    vec = features_for(RawGeometry(2.0, 3.0, 4.0, 10.0, 10.0), 5)
    assert vec.category_index == 5
    assert vec.as_array().shape == (len(SELECTED_FEATURES),)
    assert set(SELECTED_FEATURES) < set(ALL_FEATURES)


def _vectors(n=20, seed=0):
    rng = np.random.default_rng(seed)
    return [features_for(RawGeometry(*rng.uniform(1.0, 50.0, size=5)), 0) for _ in range(n)]


def test_standardizer_zero_mean_unit_std():
    vectors = _vectors()
    s = fit_standardizer(vectors)
    matrix = np.stack([transform(s, v).as_array() for v in vectors])
    np.testing.assert_allclose(matrix.mean(axis=0), 0.0, atol=1e-10)
    np.testing.assert_allclose(matrix.std(axis=0), 1.0, atol=1e-10)


def test_inverse_transform_round_trip():
    vectors = _vectors()
    s = fit_standardizer(vectors)
    back = inverse_transform(s, transform(s, vectors[3]))
    np.testing.assert_allclose(back.as_array(), vectors[3].as_array(), atol=1e-10)


def test_degenerate_feature_named():
    same = features_for(RawGeometry(2.0, 2.0, 2.0, 5.0, 5.0), 0)
    with pytest.raises(DegenerateFeatureError) as info:
        fit_standardizer([same, same, same])
    assert info.value.feature == SELECTED_FEATURES[0]


def test_log_target_round_trip_and_domain():
    y = np.array([0.0, 3.5, 3450.0])
    np.testing.assert_allclose(target_log_inverse(target_log(y)), y)
    with pytest.raises(DomainError):
        target_log(-1.0)


def test_from_array_checks_length():
    with pytest.raises(Exception):
        FeatureVector.from_array([1.0, 2.0], 0)


def test_feature_audit_rows():
    rng = np.random.default_rng(1)
    geometries = [RawGeometry(*rng.uniform(1.0, 50.0, size=5)) for _ in range(30)]
    weights = [g.L_x * g.L_y * g.L_z * 0.01 for g in geometries]
    rows = feature_audit(geometries, weights)
    assert [r["feature_name"] for r in rows] == list(ALL_FEATURES)
    volume_row = rows[0]
    assert volume_row["selected"]
    assert volume_row["pearson_r_vs_log_weight"] > 0.9


def _brute_force(lx, ly, lz, dx, dy):
    """Independent evaluation straight from the definitions."""
    v = lx * ly * lz
    a = 2 * lx * ly + 2 * ly * lz + 2 * lz * lx
    lo, mid, hi = sorted([lx, ly, lz])
    psi = (math.pi ** (1 / 3)) * ((6 * v) ** (2 / 3)) / a
    return {
        "log_volume": math.log(1 + v), "log_surf_area": math.log(1 + a), "log_max_dim": math.log(1 + hi),
        "log_geo_mean": math.log(1 + v ** (1 / 3)), "compactness": lo / hi, "log_vol_surf": math.log(1 + v / a),
        "elongation": hi / mid, "aspect_xy": lx / ly, "aspect_yz": ly / lz, "sphericity": psi,
        "flatness": lo / mid, "surf_sphere": math.log(1 + a) * psi, "vol_compact": math.log(1 + v) * lo / hi,
        "log_dist": math.log(1 + math.sqrt(dx * dx + dy * dy)), "log_app_vol": math.log(1 + v / dx ** 2),
    }


def test_formulas_match_brute_force():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        values = rng.uniform(0.5, 900.0, size=5)
        got = compute_all_features(RawGeometry(*values))
        expected = _brute_force(*values)
        for name in ALL_FEATURES:
            assert got[name] == pytest.approx(expected[name], rel=1e-10), name


def test_extent_permutation_changes_only_the_aspect_ratios():
    base = RawGeometry(30.0, 120.0, 45.0, 80.0, 50.0)
    reference = compute_all_features(base)
    orientation_bound = {"aspect_xy", "aspect_yz"}
    for l_x, l_y, l_z in [(120.0, 45.0, 30.0), (45.0, 30.0, 120.0), (30.0, 45.0, 120.0)]:
        feats = compute_all_features(RawGeometry(l_x, l_y, l_z, 80.0, 50.0))
        for name in ALL_FEATURES:
            if name in orientation_bound:
                assert feats[name] != pytest.approx(reference[name]), name
            else:
                assert feats[name] == pytest.approx(reference[name], rel=1e-12), name
