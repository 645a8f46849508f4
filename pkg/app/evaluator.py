"""
Regression metrics overall and per weight-range bin, and report files.
"""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from errors import ContractError, DatasetIOError, DomainError
from model import MultimodalWeightPredictor
from synthetic_dataset import DatasetArrays

logger = logging.getLogger(__name__)

MAPE_FLOOR = 1e-9
UNCOVERED = "uncovered"


@dataclass
class BinRow:
    label: str
    lo: float | None
    hi: float | None
    n: int
    mae_kg: float | None = None
    mape_pct: float | None = None


@dataclass
class MetricReport:
    split: str
    n: int
    mae_kg: float
    rmse_kg: float
    mape_pct: float
    r2: float
    msle: float
    mape_excluded: int = 0
    bins: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _mape(y_hat: np.ndarray, y: np.ndarray) -> tuple[float, int]:
    if np.any(y < 0):
        raise DomainError("MAPE needs non-negative targets")
    usable = y >= MAPE_FLOOR
    excluded = int((~usable).sum())
    if not usable.any():
        raise DomainError("MAPE is undefined: every target is zero")
    return float(100.0 * np.mean(np.abs(y_hat[usable] - y[usable]) / y[usable])), excluded


def metrics(y_hat, y) -> dict:
    """
    MAE, RMSE, MAPE (%), R^2 and MSLE of predictions against targets.

    Targets below 1e-9 are left out of MAPE and counted in `mape_excluded`.

    Raises:
        DomainError: negative targets, or zero target variance (R^2 undefined)
    """
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_hat.shape != y.shape:
        raise ContractError(f"{y_hat.size} predictions for {y.size} targets")
    if y.size < 2:
        raise ContractError("metrics need at least 2 samples")
    err = y_hat - y
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DomainError("R^2 is undefined: the targets have zero variance")
    mape, excluded = _mape(y_hat, y)
    msle = float(np.mean((np.log1p(np.maximum(y_hat, 0.0)) - np.log1p(y)) ** 2))
    return {
        "n": int(y.size),
        "mae_kg": float(np.mean(np.abs(err))),
        "rmse_kg": math.sqrt(float(np.mean(err * err))),
        "mape_pct": mape,
        "r2": 1.0 - float(np.sum(err * err)) / ss_tot,
        "msle": msle,
        "mape_excluded": excluded,
    }


def bin_metrics(y_hat, y, bins: Sequence[dict]) -> list[BinRow]:
    """
    MAE and MAPE per half-open [lo, hi) range of the ground truth, plus an
    "uncovered" row for samples outside every bin. Empty bins get n=0 and
    null metrics.
    """
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    covered = np.zeros(y.size, dtype=bool)
    rows = []

    def row(label, lo, hi, mask):
        n = int(mask.sum())
        if n == 0:
            return BinRow(label, lo, hi, 0)
        mae = float(np.mean(np.abs(y_hat[mask] - y[mask])))
        usable = mask & (y >= MAPE_FLOOR)
        mape = float(100.0 * np.mean(np.abs(y_hat[usable] - y[usable]) / y[usable])) if usable.any() else None
        return BinRow(label, lo, hi, n, mae, mape)

    for b in bins:
        lo, hi = float(b["lo"]), float(b["hi"])
        mask = (y >= lo) & (y < hi) & ~covered
        covered |= mask
        rows.append(row(str(b["label"]), lo, hi, mask))
    rows.append(row(UNCOVERED, None, None, ~covered))
    return rows


def build_report(split: str, y_hat, y, bins: Sequence[dict]) -> MetricReport:
    core = metrics(y_hat, y)
    return MetricReport(split=split, bins=bin_metrics(y_hat, y, bins), **core)


def evaluate_model(model: MultimodalWeightPredictor, data: DatasetArrays, bins: Sequence[dict],
                   split: str = "test", batch_size: int = 64) -> tuple[MetricReport, np.ndarray]:
    """Predict a split (raw features, standardized here) and score it."""
    preds = model.predict(data.images, model.standardize(data.features), data.categories, batch_size)
    return build_report(split, preds, data.weights, bins), preds


def write_report(report: MetricReport, out_dir: str | Path, stem: str = "metrics") -> tuple[Path, Path]:
    """`<stem>.json` with every field and `<stem>.csv` with one row per scope."""
    out = Path(out_dir)
    json_path, csv_path = out / f"{stem}.json", out / f"{stem}.csv"
    try:
        out.mkdir(parents=True, exist_ok=True)
        json_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        with open(csv_path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["scope", "lo", "hi", "n", "mae_kg", "rmse_kg", "mape_pct", "r2"])
            writer.writerow(["overall", "", "", report.n, report.mae_kg, report.rmse_kg, report.mape_pct, report.r2])
            for b in report.bins:
                writer.writerow([b.label, "" if b.lo is None else b.lo, "" if b.hi is None else b.hi, b.n,
                                 "" if b.mae_kg is None else b.mae_kg, "",
                                 "" if b.mape_pct is None else b.mape_pct, ""])
    except OSError as e:
        raise DatasetIOError(f"Cannot write report to {out}: {e}") from e
    logger.info("Wrote %s and %s", json_path, csv_path)
    return json_path, csv_path
