"""
Two-phase training loop.

Phase 1 (the first `warmup_epochs` epochs) freezes the visual encoder and
trains the metadata encoder, fusion and head. Phase 2 unfreezes the backbone
with its own, smaller learning rate. Model selection uses validation MAE
evaluated with the EMA weights.
"""

import csv
import logging
import math
from contextlib import closing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from tqdm import tqdm

from checkpoint_io import read_checkpoint, save_model
from errors import ConfigError, ContractError, DatasetIOError, NumericError
from evaluator import metrics
from model import MultimodalWeightPredictor
from optimizer import BACKBONE_GROUP, AdamW, ExponentialMovingAverage, schedule_lr
from physics_features import FeatureVector, fit_standardizer
from run_config import RunConfig
from synthetic_dataset import (BatchLoader, DatasetArrays, SplitIndex, WasteRecord, stack_records,
                               write_split_index)
from tensor_core import Tape, Tensor

logger = logging.getLogger(__name__)

EPOCH_LOG_FIELDS = ["epoch", "phase", "lr_backbone", "lr_head", "train_loss", "val_loss", "val_mae", "val_mape"]
BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"
EPOCH_LOG = "epoch_log.csv"
SPLIT_INDEX = "split_index.json"


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    lr_backbone: float
    lr_head: float
    train_loss: float
    val_loss: float
    val_mae: float
    val_mape: float


@dataclass
class TrainingData:
    train: DatasetArrays
    val: DatasetArrays
    test: DatasetArrays
    split: SplitIndex


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log: list = field(default_factory=list)
    best_val_mae: float = math.inf
    visual_digests: list = field(default_factory=list)


def prepare_data(records: Sequence[WasteRecord], split: SplitIndex) -> TrainingData:
    """Column views of the three splits, with raw (unstandardized) features."""
    arrays = stack_records(records)
    parts = {}
    for name in ("train", "val", "test"):
        ids = split.ids(name)
        if not ids:
            raise ConfigError(f"The {name} split is empty")
        parts[name] = arrays.subset(ids)
    return TrainingData(parts["train"], parts["val"], parts["test"], split)


def build_model(cfg: RunConfig, vocabulary: Sequence[str], train: DatasetArrays) -> MultimodalWeightPredictor:
    """Fresh model with its standardizer and output scale fitted on the training split."""
    model = MultimodalWeightPredictor(cfg.model_config(len(vocabulary)), seed=cfg.train.seed)
    model.standardizer = fit_standardizer(
        [FeatureVector.from_array(row, c) for row, c in zip(train.features, train.categories)])
    model.fit_output_scale(train.weights)
    return model


def write_epoch_log(path: Path, rows: Sequence[EpochRecord]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=EPOCH_LOG_FIELDS)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in asdict(row).items()})
    except OSError as e:
        raise DatasetIOError(f"Cannot write epoch log {path}: {e}") from e


class Trainer:
    """
    Args:
        cfg (RunConfig): validated run configuration
        model (MultimodalWeightPredictor): model with fitted standardizer/output scale
        data (TrainingData): raw-feature splits
        vocabulary (list[str]): category names in index order
        out_dir: run directory receiving checkpoints and logs
    """

    def __init__(self, cfg: RunConfig, model: MultimodalWeightPredictor, data: TrainingData,
                 vocabulary: Sequence[str], out_dir: str | Path):
        self.cfg = cfg
        self.model = model
        self.vocabulary = list(vocabulary)
        self.out_dir = Path(out_dir)
        self.train_data = data.train.with_features(model.standardize(data.train.features))
        self.val_data = data.val.with_features(model.standardize(data.val.features))
        self.split = data.split
        self.modal_category = int(np.bincount(data.train.categories).argmax())
        t = cfg.train
        self.optimizer = AdamW(model.params, weight_decay=t.weight_decay, clip_norm=t.clip_norm or None)
        self.ema = ExponentialMovingAverage.track(model.params, t.ema_decay, t.ema_warmup)
        self.rng = np.random.default_rng([t.seed, 1])
        self.start_epoch = 0
        self.best_val_mae = math.inf
        self.log: list[EpochRecord] = []

    @property
    def best_path(self) -> Path:
        return self.out_dir / BEST_CKPT

    @property
    def last_path(self) -> Path:
        return self.out_dir / LAST_CKPT

    def _header(self, epoch: int, kind: str) -> dict:
        return {
            "kind": kind,
            "epoch": epoch,
            "best_val_mae": self.best_val_mae if math.isfinite(self.best_val_mae) else None,
            "rng_state": self.rng.bit_generator.state,
            "optimizer": self.optimizer.state_meta(),
            "ema": {"decay": self.ema.decay, "warmup": self.ema.warmup, "updates": self.ema.updates},
            "split_hash": self.split.digest(),
            "modal_category": self.modal_category,
            "log": [asdict(r) for r in self.log],
        }

    def _save(self, path: Path, epoch: int, kind: str) -> None:
        arrays = {f"ema.{name}": value for name, value in self.ema.shadow.items()}
        arrays.update(self.optimizer.state_arrays())
        save_model(path, self.model, self.cfg, self.vocabulary, self._header(epoch, kind), arrays)

    def resume(self) -> None:
        """Restore parameters, optimizer, EMA, RNG and log from last.ckpt."""
        ckpt = read_checkpoint(self.last_path)
        if ckpt.header.get("split_hash") != self.split.digest():
            raise ConfigError(f"Cannot resume: expected split hash {ckpt.header.get('split_hash')}")
        self.model.params.load(ckpt.group("param"))
        self.optimizer.load_state(ckpt.header.get("optimizer", {}),
                                  {k: v for k, v in ckpt.arrays.items() if k.startswith("adam.")})
        self.ema.shadow = ckpt.group("ema")
        self.ema.updates = int(ckpt.header["ema"]["updates"])
        self.rng.bit_generator.state = ckpt.header["rng_state"]
        self.start_epoch = ckpt.epoch
        best = ckpt.header.get("best_val_mae")
        self.best_val_mae = math.inf if best is None else float(best)
        self.log = [EpochRecord(**row) for row in ckpt.header.get("log", [])]
        logger.info("Resumed from %s at epoch %d", self.last_path, self.start_epoch)

    def train_epoch(self, epoch: int, lrs: dict[str, float]) -> float:
        t = self.cfg.train
        loader = BatchLoader(self.train_data, t.batch_size, training=True, augment_images=self.cfg.data.augment,
                             photometric=self.cfg.data.photometric, seed=t.seed,
                             threads=self.cfg.runtime.threads)
        total, count = 0.0, 0
        with closing(loader.epoch(epoch)) as batches:
            for batch in batches:
                self.model.params.zero_grad()
                with Tape() as tape:
                    result = self.model.forward(batch.images, batch.features, batch.categories,
                                                training=True, rng=self.rng)
                    loss = self.model.loss(result.raw, batch.weights, t.loss)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(f"Loss became {value} at epoch {epoch + 1}; last good checkpoint kept at "
                                       f"{self.last_path}")
                tape.backward(loss)
                self.optimizer.step(lrs)
                self.ema.update(self.model.params)
                total += value * len(batch.weights)
                count += len(batch.weights)
        return total / count

    def validate(self) -> tuple[float, float, float]:
        """(loss, MAE, MAPE) on the validation split with the EMA weights."""
        data = self.val_data
        with self.model.params.swapped(self.ema.shadow):
            raw = np.concatenate([
                self.model.forward(data.images[i:i + 64], data.features[i:i + 64], data.categories[i:i + 64]).raw.data
                for i in range(0, len(data), 64)
            ])
        loss = self.model.loss(Tensor(raw), data.weights, self.cfg.train.loss).item()
        preds = self.model.to_weight(raw)
        err = np.abs(preds - data.weights)
        if len(data) >= 2 and np.ptp(data.weights) > 0:
            m = metrics(preds, data.weights)
            return loss, m["mae_kg"], m["mape_pct"]
        return loss, float(err.mean()), float(100.0 * np.mean(err / np.maximum(data.weights, 1e-9)))

    def train(self, resume: bool = False) -> TrainResult:
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        cfg.save(self.out_dir)
        write_split_index(self.out_dir / SPLIT_INDEX, self.split)
        if resume:
            self.resume()

        result = TrainResult(self.best_path, self.last_path)
        settings = cfg.train.schedule()
        params = self.model.params
        bar = tqdm(total=cfg.train.epochs, initial=self.start_epoch, desc="Training", unit="epoch",
                   dynamic_ncols=True, disable=not cfg.runtime.progress)
        try:
            for epoch in range(self.start_epoch, cfg.train.epochs):
                phase = 1 if epoch < cfg.train.warmup_epochs else 2
                params.set_trainable(BACKBONE_GROUP, phase == 2)
                lrs = schedule_lr(epoch, settings)
                before = params.digest(BACKBONE_GROUP)

                train_loss = self.train_epoch(epoch, lrs)
                after = params.digest(BACKBONE_GROUP)
                if phase == 1 and before != after:
                    raise ContractError(f"Frozen visual encoder changed during epoch {epoch + 1}")
                result.visual_digests.append(after)

                val_loss, val_mae, val_mape = self.validate()
                row = EpochRecord(epoch + 1, phase, lrs[BACKBONE_GROUP], lrs["head"],
                                  train_loss, val_loss, val_mae, val_mape)
                self.log.append(row)
                if val_mae < self.best_val_mae:
                    self.best_val_mae = val_mae
                    self._save(self.best_path, epoch + 1, "best")
                self._save(self.last_path, epoch + 1, "last")
                write_epoch_log(self.out_dir / EPOCH_LOG, self.log)

                logger.info("epoch %d phase %d lr_backbone=%.3g lr_head=%.3g train_loss=%.5f val_loss=%.5f "
                            "val_mae=%.3f val_mape=%.2f", row.epoch, phase, row.lr_backbone, row.lr_head,
                            train_loss, val_loss, val_mae, val_mape)
                bar.set_postfix({"loss": f"{train_loss:.4f}", "val_mae": f"{val_mae:.2f}", "phase": phase})
                bar.update(1)
        finally:
            bar.close()
            params.set_trainable(BACKBONE_GROUP, True)

        result.log = list(self.log)
        result.best_val_mae = self.best_val_mae
        return result
