"""
Post-hoc explanations: modality contribution ratio, exact Shapley values over
the ten metadata inputs, and the explanation report.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from errors import DatasetIOError
from model import MultimodalWeightPredictor
from mutual_fusion import modality_norms
from physics_features import SELECTED_FEATURES, features_for
from report_renderer import ReportRenderer
from synthetic_dataset import WasteRecord
from tensor_core import Tensor

logger = logging.getLogger(__name__)

ATTRIBUTED_INPUTS = SELECTED_FEATURES + ("category",)
MCR_EPS = 1e-8
COALITION_CHUNK = 256


def mcr(h_v, h_m, eps: float = MCR_EPS) -> tuple[float, float]:
    """
    Norm-based split of influence between the two encoders:
    s_visual = |h_v| / (|h_v| + |h_m| + eps), s_meta likewise.
    """
    norm_v, norm_m = modality_norms(np.ravel(h_v.data if isinstance(h_v, Tensor) else h_v),
                                    np.ravel(h_m.data if isinstance(h_m, Tensor) else h_m))
    denom = norm_v + norm_m + eps
    return norm_v / denom, norm_m / denom


def coalition_masks(n_players: int) -> np.ndarray:
    """(2^n, n) boolean membership matrix; row k is the binary expansion of k."""
    codes = np.arange(2 ** n_players)[:, None]
    return ((codes >> np.arange(n_players)) & 1).astype(bool)


def shapley_exact(value_fn: Callable[[np.ndarray], np.ndarray], n_players: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Exact Shapley values by enumerating every coalition.

    Args:
        value_fn: maps a (K, n) boolean mask batch to K coalition values
        n_players (int): number of players

    Returns:
        (phi, values): per-player attributions and the value of every coalition
    """
    masks = coalition_masks(n_players)
    values = np.asarray(value_fn(masks), dtype=np.float64).reshape(-1)
    sizes = masks.sum(axis=1)
    weights = np.array([math.factorial(s) * math.factorial(n_players - s - 1) / math.factorial(n_players)
                        if s < n_players else 0.0 for s in range(n_players + 1)])
    phi = np.zeros(n_players)
    codes = np.arange(len(masks))
    for i in range(n_players):
        without = codes[~masks[:, i]]
        gain = values[without | (1 << i)] - values[without]
        phi[i] = float(np.sum(weights[sizes[without]] * gain))
    return phi, values


def model_value_fn(model: MultimodalWeightPredictor, image: np.ndarray, features: np.ndarray, category: int,
                   baseline_features: np.ndarray, baseline_category: int) -> Callable[[np.ndarray], np.ndarray]:
    """
    Coalition value = predicted kg with absent inputs set to the baseline;
    the image is encoded once and held fixed.
    """
    h_v, tokens = model.encode_visual(image[None])

    def value(masks: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, len(masks), COALITION_CHUNK):
            chunk = masks[start:start + COALITION_CHUNK]
            k = len(chunk)
            feats = np.where(chunk[:, :len(SELECTED_FEATURES)], features, baseline_features)
            cats = np.where(chunk[:, -1], category, baseline_category)
            hv = Tensor(np.repeat(h_v.data, k, axis=0), copy=False)
            tk = Tensor(np.repeat(tokens.data, k, axis=0), copy=False)
            raw, _ = model.predict_from_visual(hv, tk, feats, cats)
            out.append(model.to_weight(raw.data))
        return np.concatenate(out)

    return value


@dataclass
class ExplanationReport:
    record_id: str
    category: str
    prediction_kg: float
    s_visual: float
    s_meta: float
    baseline_prediction_kg: float
    shapley: list = field(default_factory=list)
    actual_kg: float | None = None
    abs_error_kg: float | None = None
    pct_error: float | None = None
    efficiency_gap: float = 0.0
    rendered_text: str = ""
    narration: str = ""

    def top_features(self, k: int = 3) -> list[tuple[str, float]]:
        return sorted(self.shapley, key=lambda item: -abs(item[1]))[:k]

    def context(self) -> dict:
        """Template fields, numbers rounded to one decimal."""
        return {
            "record_id": self.record_id,
            "category": self.category,
            "prediction_kg": f"{self.prediction_kg:.1f}",
            "actual_kg": None if self.actual_kg is None else f"{self.actual_kg:.1f}",
            "abs_error_kg": None if self.abs_error_kg is None else f"{self.abs_error_kg:.1f}",
            "pct_error": None if self.pct_error is None else f"{self.pct_error:.1f}",
            "s_visual_pct": f"{100.0 * self.s_visual:.1f}",
            "s_meta_pct": f"{100.0 * self.s_meta:.1f}",
            "baseline_prediction_kg": f"{self.baseline_prediction_kg:.1f}",
            "top_features": [{"name": name, "phi": phi, "signed": f"{phi:+.1f}"}
                             for name, phi in self.top_features()],
        }

    def prompt(self) -> dict:
        """Structured prompt for an external narrator."""
        return {
            "record_id": self.record_id,
            "category": self.category,
            "prediction_kg": self.prediction_kg,
            "actual_kg": self.actual_kg,
            "s_visual": self.s_visual,
            "s_meta": self.s_meta,
            "baseline_prediction_kg": self.baseline_prediction_kg,
            "shapley_top3": [{"feature": name, "phi": phi} for name, phi in self.top_features()],
        }

    def to_json(self) -> dict:
        payload = asdict(self)
        payload["shapley"] = [{"feature": name, "phi": phi} for name, phi in self.shapley]
        return payload

    def full_text(self) -> str:
        if not self.narration:
            return self.rendered_text
        return f"{self.rendered_text.rstrip()}\n\nNarrative\n---------\n{self.narration.strip()}\n"


def explain_record(model: MultimodalWeightPredictor, record: WasteRecord, baseline_category: int,
                   renderer: ReportRenderer | None = None, eps: float = MCR_EPS,
                   actual_known: bool = True) -> ExplanationReport:
    """
    Explain one record: prediction, MCR, Shapley attributions and the rendered report.

    The numeric baseline is the standardized zero vector (the training mean).
    """
    raw_features = features_for(record.geometry, record.category_index).as_array()[None]
    features = model.standardize(raw_features)[0]
    categories = np.array([record.category_index])

    prediction = float(model.predict(record.image[None], features[None], categories)[0])
    result = model.forward(record.image[None], features[None], categories)
    s_visual, s_meta = mcr(result.h_v, result.h_m, eps)

    value = model_value_fn(model, record.image, features, record.category_index,
                           np.zeros(len(SELECTED_FEATURES)), baseline_category)
    phi, values = shapley_exact(value, len(ATTRIBUTED_INPUTS))
    baseline_prediction = float(values[0])
    gap = abs(float(phi.sum()) - (float(values[-1]) - baseline_prediction))

    report = ExplanationReport(
        record_id=record.id,
        category=record.category,
        prediction_kg=prediction,
        s_visual=s_visual,
        s_meta=s_meta,
        baseline_prediction_kg=baseline_prediction,
        shapley=[(name, float(p)) for name, p in zip(ATTRIBUTED_INPUTS, phi)],
        efficiency_gap=gap,
    )
    if actual_known:
        report.actual_kg = float(record.weight_kg)
        report.abs_error_kg = abs(prediction - record.weight_kg)
        report.pct_error = 100.0 * report.abs_error_kg / record.weight_kg if record.weight_kg > 0 else None
    if renderer is not None:
        report.rendered_text = renderer.render(report.context())
    return report


def write_explanation(report: ExplanationReport, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    text_path, json_path = out / f"explanation_{report.record_id}.txt", out / f"explanation_{report.record_id}.json"
    try:
        out.mkdir(parents=True, exist_ok=True)
        text_path.write_text(report.full_text(), encoding="utf-8")
        json_path.write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"Cannot write explanation to {out}: {e}") from e
    return text_path, json_path
