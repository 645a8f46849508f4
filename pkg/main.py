#!/usr/bin/env python3
"""
Waste Weight Predictor - Main Application

Estimates the weight of waste objects from an image plus physical metadata:
1. Generates a synthetic, statistics-matched dataset (CSV + images)
2. Trains the multimodal predictor in two phases
3. Evaluates it overall and per weight range, and runs the ablation matrix
4. Predicts and explains single records (modality split, Shapley drivers, text report)
5. Checks every gradient against finite differences
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

ROOT = Path(os.path.dirname(os.path.abspath(__file__)))

# Add the app directory to the path
sys.path.append(str(ROOT / "app"))

import numpy as np

from ablation import run_ablation
from checkpoint_io import load_model
from errors import ConfigError, MWPError, NumericError, VocabularyError
from evaluator import evaluate_model, write_report
from explainer import explain_record, write_explanation
from gradcheck import run_suite
from narration_controller import NarrationController
from physics_features import features_for
from report_renderer import ReportRenderer
from run_config import RunConfig
from synthetic_dataset import (GeneratorConfig, generate, load_dataset, read_split_index, stratified_split,
                               write_dataset_bundle)
from trainer import SPLIT_INDEX, Trainer, build_model, prepare_data

logger = logging.getLogger("weight_predictor")


def resolve(path: str | Path) -> Path:
    """Paths in the config are relative to the working directory, falling back to the repo root."""
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    return ROOT / path


class WeightPredictorAgent:
    def __init__(self, cfg: RunConfig):
        """
        Initialize the agent with a validated run configuration
        """
        self.cfg = cfg

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig.load(resolve(self.cfg.data.categories))

    def generate(self, out_dir: str) -> Path:
        """
        Generate the synthetic dataset

        Args:
            out_dir (str): dataset directory to create

        Returns:
            Path: the dataset directory
        """
        gen_cfg = self.generator_config()
        print(f"🔍 Generating {self.cfg.data.n} records (seed {self.cfg.data.seed})...")
        records = generate(gen_cfg, self.cfg.data.n, self.cfg.data.seed, self.cfg.vit.image_side)
        root = write_dataset_bundle(records, out_dir, gen_cfg)
        self.cfg.save(root)
        print(f"✅ Dataset written to {root}")
        return root

    def load_training_data(self, data_dir: str):
        vocabulary = self.generator_config().vocabulary
        records = load_dataset(data_dir, vocabulary)
        split = stratified_split(records, self.cfg.data.split, self.cfg.data.split_seed)
        print(f"✅ Loaded {len(records)} records: {len(split.train)} train / {len(split.val)} val / "
              f"{len(split.test)} test")
        return prepare_data(records, split), vocabulary

    def train(self, data_dir: str, out_dir: str, resume: bool = False) -> Path:
        data, vocabulary = self.load_training_data(data_dir)
        model = build_model(self.cfg, vocabulary, data.train)
        print(f"🔍 Training {self.cfg.fusion.mode} fusion model "
              f"({model.params.count()} parameters, {self.cfg.train.epochs} epochs)...")
        result = Trainer(self.cfg, model, data, vocabulary, out_dir).train(resume=resume)
        print(f"✅ Best validation MAE {result.best_val_mae:.2f} kg")
        print(f"  📄 {result.best_path}")
        print(f"  📄 {result.last_path}")
        return result.best_path

    def evaluate(self, checkpoint: str, data_dir: str, split_name: str, out_dir: str | None,
                 split_index: str | None = None) -> Path:
        model, ckpt, run_cfg = load_model(checkpoint)
        index_path = Path(split_index) if split_index else Path(checkpoint).parent / SPLIT_INDEX
        split = read_split_index(index_path, expected_hash=ckpt.header.get("split_hash"))
        records = load_dataset(data_dir, ckpt.header["vocabulary"])
        data = prepare_data(records, split)
        report, _ = evaluate_model(model, getattr(data, split_name), self.cfg.eval.bins, split_name)

        out = Path(out_dir) if out_dir else Path(checkpoint).parent
        write_report(report, out, f"metrics_{split_name}")
        self.cfg.save(out)
        print(f"✅ {split_name}: MAE {report.mae_kg:.2f} kg | RMSE {report.rmse_kg:.2f} kg | "
              f"MAPE {report.mape_pct:.2f}% | R² {report.r2:.4f}")
        for row in report.bins:
            mae = "n/a" if row.mae_kg is None else f"{row.mae_kg:.2f} kg"
            print(f"    {row.label:<10} n={row.n:<5} MAE {mae}")
        return out

    def select_records(self, data_dir: str | None, record_id: str | None, records_csv: str | None,
                       vocabulary: list[str]):
        if records_csv:
            return load_dataset(records_csv, vocabulary)
        if not data_dir or not record_id:
            raise ConfigError("predict/explain need --records <csv>, or --data <dir> with --id <record id>")
        matches = [r for r in load_dataset(data_dir, vocabulary) if r.id == record_id]
        if not matches:
            raise VocabularyError(f"Record '{record_id}' is not in {data_dir}")
        return matches

    def predict(self, checkpoint: str, data_dir: str | None, record_id: str | None,
                records_csv: str | None, out_dir: str | None) -> list[dict]:
        model, ckpt, _ = load_model(checkpoint)
        rows = []
        for record in self.select_records(data_dir, record_id, records_csv, ckpt.header["vocabulary"]):
            features = model.standardize(features_for(record.geometry, record.category_index).as_array()[None])
            value = float(model.predict(record.image[None], features, np.array([record.category_index]))[0])
            rows.append({"id": record.id, "category": record.category, "prediction_kg": value})
            print(f"✅ {record.id} ({record.category}): {value:.1f} kg")

        out = Path(out_dir) if out_dir else Path(checkpoint).parent
        out.mkdir(parents=True, exist_ok=True)
        (out / "predictions.json").write_text(json.dumps(rows, indent=2), encoding="utf-8")
        self.cfg.save(out)
        return rows

    def explain(self, checkpoint: str, data_dir: str | None, record_id: str | None,
                records_csv: str | None, out_dir: str | None) -> list[Path]:
        model, ckpt, _ = load_model(checkpoint)
        renderer = ReportRenderer(resolve(self.cfg.explain.template))
        narration = NarrationController(self.cfg.explain)
        baseline_category = int(ckpt.header.get("modal_category", 0))
        out = Path(out_dir) if out_dir else Path(checkpoint).parent
        written = []
        for record in self.select_records(data_dir, record_id, records_csv, ckpt.header["vocabulary"]):
            report = explain_record(model, record, baseline_category, renderer, self.cfg.explain.eps)
            if report.efficiency_gap > 1e-6 * max(1.0, abs(report.prediction_kg)):
                raise NumericError(f"Shapley efficiency check failed for {record.id}: gap {report.efficiency_gap:.3e}")
            print(f"✅ Shapley efficiency check passed for {record.id} (gap {report.efficiency_gap:.1e})")
            report.narration = narration.narrate(report.prompt())
            text_path, json_path = write_explanation(report, out)
            print(report.full_text())
            print(f"  📄 {text_path}")
            print(f"  📄 {json_path}")
            written.append(text_path)
        self.cfg.save(out)
        return written

    def gradcheck(self, seeds: int) -> bool:
        print(f"🔍 Checking gradients over {seeds} seeds per operation...")
        rows = run_suite(seeds)
        print(f"\n{'operation':<18} {'max rel error':>14} {'coords':>7}  result")
        for row in rows:
            status = "✅ pass" if row.passed else "❌ FAIL"
            print(f"{row.op:<18} {row.max_rel_error:>14.3e} {row.checked:>7}  {status}")
        failed = [row.op for row in rows if not row.passed]
        if failed:
            raise NumericError(f"Gradient check failed for: {', '.join(failed)}")
        print("\n✅ All gradient checks passed")
        return True

    def ablate(self, data_dir: str, out_dir: str) -> Path:
        data, vocabulary = self.load_training_data(data_dir)
        print("🔍 Running the ablation matrix...")
        rows = run_ablation(self.cfg, data, vocabulary, out_dir)
        self.cfg.save(out_dir)
        print(f"\n{'axis':<12} {'variant':<10} {'val MAPE':>9} {'test MAPE':>10}  status")
        for row in rows:
            val = row.get("val_mape")
            test = row.get("test_mape")
            print(f"{row['axis']:<12} {row['variant']:<10} "
                  f"{'' if val is None else f'{val:.2f}':>9} {'' if test is None else f'{test:.2f}':>10}  "
                  f"{row['status']}")
        path = Path(out_dir) / "ablation.csv"
        print(f"  📄 {path}")
        return path


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config (default: built-in defaults)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--n", type=int, help="number of records to generate")
    common.add_argument("--seed", type=int, help="seed for generation, splitting and training")
    common.add_argument("--epochs", type=int)
    common.add_argument("--fusion", choices=["mutual", "v2m", "m2v", "concat"])
    common.add_argument("--stages", type=int, help="number of fusion attention stages")
    common.add_argument("--loss", choices=["msle", "mse", "l1"])
    common.add_argument("--patch", type=int, help="ViT patch side")
    common.add_argument("--threads", type=int, help="loader/ablation worker threads")
    common.add_argument("--verbose", action="store_true")

    parser = argparse.ArgumentParser(description="Multimodal waste weight predictor")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", default="data/synthetic")

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", default="data/synthetic")
    p.add_argument("--out", default="runs/train")
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default="data/synthetic")
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--split-index", help="split index JSON (default: next to the checkpoint)")
    p.add_argument("--out")

    for name, text in (("predict", "predict record weights"), ("explain", "explain record predictions")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data")
        p.add_argument("--id")
        p.add_argument("--records", help="CSV following the metadata schema, images next to it")
        p.add_argument("--out")

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=20)

    p = sub.add_parser("ablate", parents=[common], help="run the ablation matrix")
    p.add_argument("--data", default="data/synthetic")
    p.add_argument("--out", default="runs/ablation")
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(resolve(args.config) if args.config else None)
    cfg.apply_env()
    shortcuts = {
        "n": ["data.n"],
        "seed": ["data.seed", "data.split_seed", "train.seed"],
        "epochs": ["train.epochs"],
        "fusion": ["fusion.mode"],
        "stages": ["fusion.stages"],
        "loss": ["train.loss"],
        "patch": ["vit.patch_side"],
        "threads": ["runtime.threads", "eval.ablation_workers"],
    }
    for flag, keys in shortcuts.items():
        value = getattr(args, flag)
        if value is not None:
            for key in keys:
                cfg.set(key, value)
    cfg.apply_overrides(args.set)
    if args.epochs is not None and cfg.train.warmup_epochs >= cfg.train.epochs:
        cfg.train.warmup_epochs = max(0, cfg.train.epochs // 4)
    return cfg.validate()


def run(args: argparse.Namespace) -> int:
    agent = WeightPredictorAgent(load_config(args))
    if args.command == "generate":
        agent.generate(args.out)
    elif args.command == "train":
        agent.train(args.data, args.out, args.resume)
    elif args.command == "eval":
        agent.evaluate(args.checkpoint, args.data, args.split or agent.cfg.eval.split, args.out, args.split_index)
    elif args.command == "predict":
        agent.predict(args.checkpoint, args.data, args.id, args.records, args.out)
    elif args.command == "explain":
        agent.explain(args.checkpoint, args.data, args.id, args.records, args.out)
    elif args.command == "gradcheck":
        agent.gradcheck(args.seeds)
    elif args.command == "ablate":
        agent.ablate(args.data, args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    """
    Main entry point
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except KeyboardInterrupt:
        print("\n\n⚠️  Interrupted by user.")
        return 130
    except MWPError as e:
        print(f"❌ {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
