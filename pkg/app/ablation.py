"""
Ablation matrix over fusion strategy, loss, fusion depth and patch granularity.
"""

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from checkpoint_io import load_model
from errors import DatasetIOError, MWPError
from evaluator import evaluate_model
from run_config import RunConfig
from trainer import Trainer, TrainingData, build_model

logger = logging.getLogger(__name__)

ABLATION_FIELDS = ["axis", "variant", "status", "val_msle", "val_mae", "val_rmse", "val_mape",
                   "test_msle", "test_mae", "test_rmse", "test_mape"]

# axis -> [(variant label, dotted overrides)]
VARIANTS = {
    "fusion": [
        ("concat", {"fusion.mode": "concat"}),
        ("v2m", {"fusion.mode": "v2m"}),
        ("m2v", {"fusion.mode": "m2v"}),
        ("mutual", {"fusion.mode": "mutual"}),
    ],
    "loss": [
        ("mse", {"train.loss": "mse"}),
        ("l1", {"train.loss": "l1"}),
        ("msle", {"train.loss": "msle"}),
    ],
    "depth": [
        ("stages=1", {"fusion.stages": 1}),
        ("stages=2", {"fusion.stages": 2}),
        ("stages=3", {"fusion.stages": 3}),
    ],
    "granularity": [
        ("patch=16", {"vit.patch_side": 16}),
        ("patch=8", {"vit.patch_side": 8}),
    ],
}


def variant_config(base: RunConfig, overrides: dict) -> RunConfig:
    cfg = RunConfig.from_dict(base.to_dict())
    for key, value in overrides.items():
        cfg.set(key, value)
    return cfg.validate()


def run_variant(axis: str, variant: str, base: RunConfig, overrides: dict, data: TrainingData,
                vocabulary: Sequence[str], out_dir: Path) -> dict:
    row = {"axis": axis, "variant": variant, "status": "ok"}
    try:
        cfg = variant_config(base, overrides)
        model = build_model(cfg, vocabulary, data.train)
        result = Trainer(cfg, model, data, vocabulary, out_dir).train()
        best, _, _ = load_model(result.best_path)
        for split, arrays in (("val", data.val), ("test", data.test)):
            report, _ = evaluate_model(best, arrays, cfg.eval.bins, split)
            row.update({f"{split}_msle": report.msle, f"{split}_mae": report.mae_kg,
                        f"{split}_rmse": report.rmse_kg, f"{split}_mape": report.mape_pct})
    except MWPError as e:
        logger.warning("Ablation variant %s/%s failed: %s", axis, variant, e)
        row["status"] = f"failed: {e}"
    return row


def run_ablation(base: RunConfig, data: TrainingData, vocabulary: Sequence[str], out_dir: str | Path,
                 axes: Sequence[str] | None = None) -> list[dict]:
    """
    Train and score every variant with identical seed and splits.

    A failing variant is reported with status "failed: ..." and the run continues.
    With eval.ablation_workers > 1 variants train on separate threads.
    """
    out_dir = Path(out_dir)
    axes = list(axes or base.eval.ablation_axes)
    jobs = []
    for axis in axes:
        for variant, overrides in VARIANTS.get(axis, []):
            slug = variant.replace("=", "")
            jobs.append((axis, variant, overrides, out_dir / f"{axis}_{slug}"))

    workers = max(1, base.eval.ablation_workers)
    if workers > 1:
        base = RunConfig.from_dict(base.to_dict())
        base.runtime.progress = False
    if workers == 1:
        rows = [run_variant(axis, variant, base, overrides, data, vocabulary, path)
                for axis, variant, overrides, path in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_variant, axis, variant, base, overrides, data, vocabulary, path)
                       for axis, variant, overrides, path in jobs]
            rows = [f.result() for f in futures]

    write_ablation(rows, out_dir / "ablation.csv")
    return rows


def write_ablation(rows: Sequence[dict], path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=ABLATION_FIELDS, restval="")
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise DatasetIOError(f"Cannot write ablation matrix {path}: {e}") from e
    return path
