"""
Physics-informed descriptors computed from raw object geometry.

All fifteen candidate descriptors can be computed; nine of them feed the
metadata encoder. Geometry is stored in one consistent (centimetre-scale)
length unit and volumes are in that unit cubed.
"""

import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from errors import ContractError, DegenerateFeatureError, DomainError

SELECTED_FEATURES = (
    "log_volume",
    "log_max_dim",
    "compactness",
    "log_vol_surf",
    "elongation",
    "aspect_xy",
    "aspect_yz",
    "surf_sphere",
    "log_dist",
)

REJECTED_FEATURES = (
    "log_surf_area",
    "log_geo_mean",
    "sphericity",
    "flatness",
    "vol_compact",
    "log_app_vol",
)

ALL_FEATURES = (
    "log_volume", "log_surf_area", "log_max_dim", "log_geo_mean",
    "compactness", "log_vol_surf",
    "elongation", "aspect_xy", "aspect_yz", "sphericity", "flatness",
    "surf_sphere", "vol_compact", "log_dist", "log_app_vol",
)

SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class RawGeometry:
    L_x: float
    L_y: float
    L_z: float
    D_x: float
    D_y: float

    def validate(self) -> "RawGeometry":
        for f in fields(self):
            value = getattr(self, f.name)
            try:
                number = float(value)
            except (TypeError, ValueError):
                raise DomainError(f"Geometry field {f.name} must be a number, got {value!r}") from None
            if not (math.isfinite(number) and number > 0):
                raise DomainError(f"Geometry field {f.name} must be a positive number, got {value!r}")
        return self

    def scaled(self, factor: float) -> "RawGeometry":
        return RawGeometry(*(getattr(self, f.name) * factor for f in fields(self)))


@dataclass(frozen=True)
class FeatureVector:
    log_volume: float
    log_max_dim: float
    compactness: float
    log_vol_surf: float
    elongation: float
    aspect_xy: float
    aspect_yz: float
    surf_sphere: float
    log_dist: float
    category_index: int = 0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in SELECTED_FEATURES], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float], category_index: int) -> "FeatureVector":
        if len(values) != len(SELECTED_FEATURES):
            raise ContractError(f"Expected {len(SELECTED_FEATURES)} feature values, got {len(values)}")
        return cls(*(float(v) for v in values), category_index=int(category_index))


def compute_all_features(g: RawGeometry) -> dict[str, float]:
    """
    Evaluate every descriptor of the feature taxonomy.

    Args:
        g (RawGeometry): object extents and camera geometry, all positive

    Returns:
        dict[str, float]: the 15 descriptors keyed by name
    """
    g.validate()
    dims = sorted((g.L_x, g.L_y, g.L_z))
    l_min, l_mid, l_max = dims
    volume = g.L_x * g.L_y * g.L_z
    surface = 2.0 * (g.L_x * g.L_y + g.L_y * g.L_z + g.L_x * g.L_z)
    sphericity = math.pi ** (1.0 / 3.0) * (6.0 * volume) ** (2.0 / 3.0) / surface
    compactness = l_min / l_max

    return {
        "log_volume": math.log1p(volume),
        "log_surf_area": math.log1p(surface),
        "log_max_dim": math.log1p(l_max),
        "log_geo_mean": math.log1p(volume ** (1.0 / 3.0)),
        "compactness": compactness,
        "log_vol_surf": math.log1p(volume / surface),
        "elongation": l_max / l_mid,
        "aspect_xy": g.L_x / g.L_y,
        "aspect_yz": g.L_y / g.L_z,
        "sphericity": sphericity,
        "flatness": l_min / l_mid,
        "surf_sphere": math.log1p(surface) * sphericity,
        "vol_compact": math.log1p(volume) * compactness,
        "log_dist": math.log1p(math.hypot(g.D_x, g.D_y)),
        "log_app_vol": math.log1p(volume / (g.D_x * g.D_x)),
    }


def select_features(all_features: dict[str, float], category_index: int = 0) -> FeatureVector:
    missing = [name for name in SELECTED_FEATURES if name not in all_features]
    if missing:
        raise ContractError(f"Feature map is missing: {', '.join(missing)}")
    return FeatureVector(*(all_features[name] for name in SELECTED_FEATURES), category_index=category_index)


def features_for(g: RawGeometry, category_index: int) -> FeatureVector:
    return select_features(compute_all_features(g), category_index)


@dataclass(frozen=True)
class Standardizer:
    mean: tuple
    std: tuple

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.mean, dtype=np.float64), np.array(self.std, dtype=np.float64)

    def to_dict(self) -> dict:
        return {"features": list(SELECTED_FEATURES), "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_dict(cls, payload: dict) -> "Standardizer":
        if list(payload.get("features", SELECTED_FEATURES)) != list(SELECTED_FEATURES):
            raise ContractError("Standardizer was fitted on a different feature order")
        return cls(tuple(float(v) for v in payload["mean"]), tuple(float(v) for v in payload["std"]))


def fit_standardizer(train_features: Sequence[FeatureVector]) -> Standardizer:
    """Per-feature mean and population standard deviation over the training split."""
    if len(train_features) < 2:
        raise ContractError("fit_standardizer needs at least 2 training samples")
    matrix = np.stack([f.as_array() for f in train_features])
    mu = matrix.mean(axis=0)
    sigma = matrix.std(axis=0)
    for name, s in zip(SELECTED_FEATURES, sigma):
        if s < SIGMA_FLOOR:
            raise DegenerateFeatureError(name, float(s))
    return Standardizer(tuple(mu.tolist()), tuple(sigma.tolist()))


def transform(s: Standardizer, f: FeatureVector) -> FeatureVector:
    mu, sigma = s.as_arrays()
    return FeatureVector.from_array((f.as_array() - mu) / sigma, f.category_index)


def inverse_transform(s: Standardizer, f: FeatureVector) -> FeatureVector:
    mu, sigma = s.as_arrays()
    return FeatureVector.from_array(f.as_array() * sigma + mu, f.category_index)


def transform_matrix(s: Standardizer, matrix: np.ndarray) -> np.ndarray:
    mu, sigma = s.as_arrays()
    return (matrix - mu) / sigma


def target_log(y: float | np.ndarray) -> float | np.ndarray:
    if np.any(np.asarray(y) < 0):
        raise DomainError("Weights must be non-negative for the log target")
    return np.log1p(y)


def target_log_inverse(z: float | np.ndarray) -> float | np.ndarray:
    return np.expm1(z)


def feature_audit(geometries: Iterable[RawGeometry], weights: Sequence[float]) -> list[dict]:
    """
    Pearson correlation of each descriptor against ln(1 + weight).

    Returns:
        list[dict]: rows with feature_name, pearson_r_vs_log_weight, selected
    """
    table = [compute_all_features(g) for g in geometries]
    log_w = np.log1p(np.asarray(weights, dtype=np.float64))
    rows = []
    for name in ALL_FEATURES:
        column = np.array([row[name] for row in table])
        if column.std() < SIGMA_FLOOR or log_w.std() < SIGMA_FLOOR:
            r = float("nan")
        else:
            r = float(np.corrcoef(column, log_w)[0, 1])
        rows.append({"feature_name": name, "pearson_r_vs_log_weight": r, "selected": name in SELECTED_FEATURES})
    return rows
