#!/usr/bin/env python3
"""
Dataset Validation Script

This script validates that a dataset directory (metadata.csv + images/) is
properly formatted and ready for training the Waste Weight Predictor.
"""

import os
import sys
from collections import Counter
from pathlib import Path
from typing import List, Sequence

sys.path.append(os.path.join(os.path.dirname(os.path.abspath(__file__)), 'app'))

import numpy as np

from errors import MWPError
from synthetic_dataset import GeneratorConfig, WasteRecord, load_dataset, read_vocabulary


def validate_records(records: Sequence[WasteRecord], cfg: GeneratorConfig) -> List[str]:
    """
    Check every record against its category's weight range and the image shape

    Args:
        records: Records loaded from the dataset
        cfg: Generator configuration holding the category ranges

    Returns:
        List of validation error messages (empty if valid)
    """
    errors = []
    if len(records) == 0:
        return ["Dataset has no records"]

    known = set(cfg.vocabulary)
    sides = {r.image.shape for r in records}
    if len(sides) > 1:
        errors.append(f"Images have mixed shapes: {sorted(sides)}")

    seen = Counter(r.id for r in records)
    for record_id, count in seen.items():
        if count > 1:
            errors.append(f"Record id {record_id} appears {count} times")

    for r in records:
        if r.category not in known:
            errors.append(f"{r.id}: category '{r.category}' is not in the generator vocabulary")
            continue
        spec = cfg.spec_for(r.category)
        if not spec.weight_min <= r.weight_kg <= spec.weight_max:
            errors.append(f"{r.id}: weight {r.weight_kg:.2f} kg outside the {r.category} range "
                          f"[{spec.weight_min}, {spec.weight_max}]")
        if r.image.ndim != 3 or r.image.shape[2] != 3:
            errors.append(f"{r.id}: image is not RGB (shape {r.image.shape})")

    missing = [name for name in cfg.vocabulary if name not in {r.category for r in records}]
    for name in missing:
        errors.append(f"Category '{name}' has no records")
    return errors


def print_dataset_summary(records: Sequence[WasteRecord]) -> None:
    print("\n" + "=" * 60)
    print("DATASET SUMMARY")
    print("=" * 60)

    weights = np.array([r.weight_kg for r in records])
    print(f"Records: {len(records)}")
    print(f"Image shape: {records[0].image.shape}")
    print(f"Weight range: {weights.min():.2f} - {weights.max():.2f} kg (mean {weights.mean():.2f} kg)")

    print("\nPer category:")
    counts = Counter(r.category for r in records)
    for name, count in counts.most_common():
        print(f"  {name:<22} {count:>6}")


def main():
    """
    Main validation function
    """
    data_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "data/synthetic")

    print("Waste Weight Predictor - Dataset Validator")
    print("==========================================\n")

    try:
        print(f"Loading dataset from: {data_dir}")
        cfg_path = data_dir / "generator_config.yaml"
        cfg = GeneratorConfig.load(cfg_path) if cfg_path.exists() else GeneratorConfig.load()
        vocabulary = read_vocabulary(data_dir) or cfg.vocabulary
        records = load_dataset(data_dir, vocabulary)
        print(f"✅ {len(records)} records loaded successfully")

        print("\nValidating records...")
        errors = validate_records(records, cfg)
        if errors:
            print("\n❌ VALIDATION ERRORS FOUND:")
            for error in errors[:20]:
                print(f"  • {error}")
            if len(errors) > 20:
                print(f"  ... and {len(errors) - 20} more")
            print("\nPlease fix these issues before training.")
            sys.exit(1)
        print("✅ Dataset is valid!")

        print_dataset_summary(records)

        print("\n" + "=" * 60)
        print("READINESS CHECK")
        print("=" * 60)
        counts = Counter(r.category for r in records)
        checks = [
            ("Metadata and images loaded", True),
            ("Every category present", len(counts) == len(cfg.vocabulary)),
            ("At least 3 records per category (stratified split)", min(counts.values()) >= 3),
            ("Feature audit written", (data_dir / "feature_audit.csv").exists()),
        ]
        all_passed = True
        for check_name, passed in checks:
            print(f"{'✅' if passed else '❌'} {check_name}")
            all_passed = all_passed and passed

        print("\n" + "=" * 60)
        if all_passed:
            print("🎉 THE DATASET IS READY FOR TRAINING!")
            print("\nNext steps:")
            print(f"1. Run: python main.py train --data {data_dir}")
            print("2. Run: python main.py eval --checkpoint runs/train/best.ckpt")
        else:
            print("⚠️  Some issues found. Please review them.")
        print("=" * 60)

    except MWPError as e:
        print(f"❌ {e}")
        sys.exit(e.exit_code)


if __name__ == "__main__":
    main()
