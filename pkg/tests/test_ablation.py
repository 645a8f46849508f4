import csv

import pytest

from ablation import ABLATION_FIELDS, VARIANTS, run_ablation, run_variant, variant_config
from errors import ConfigError
from synthetic_dataset import stratified_split
from trainer import prepare_data


@pytest.fixture
def data(small_records):
    return prepare_data(small_records, stratified_split(small_records, seed=3))


def test_variant_config_leaves_base_untouched(tiny_config):
    cfg = variant_config(tiny_config, {"fusion.mode": "concat", "fusion.stages": 1})
    assert cfg.fusion.mode == "concat" and cfg.fusion.stages == 1
    assert tiny_config.fusion.mode == "mutual"
    with pytest.raises(ConfigError):
        variant_config(tiny_config, {"vit.patch_side": 5})


def test_every_axis_has_variants():
    assert set(VARIANTS) == {"fusion", "loss", "depth", "granularity"}
    assert [label for label, _ in VARIANTS["fusion"]] == ["concat", "v2m", "m2v", "mutual"]


def test_failing_variant_is_reported(tmp_path, tiny_config, generator_config, data):
    row = run_variant("granularity", "patch=5", tiny_config, {"vit.patch_side": 5}, data,
                      generator_config.vocabulary, tmp_path)
    assert row["status"].startswith("failed:")
    assert "val_mae" not in row


def test_loss_axis_matrix(tmp_path, tiny_config, generator_config, data):
    rows = run_ablation(tiny_config, data, generator_config.vocabulary, tmp_path, axes=["loss"])
    assert [r["variant"] for r in rows] == ["mse", "l1", "msle"]
    assert all(r["status"] == "ok" for r in rows)
    assert all(r["test_mae"] >= 0.0 for r in rows)

    with open(tmp_path / "ablation.csv", newline="") as f:
        reader = csv.DictReader(f)
        assert reader.fieldnames == ABLATION_FIELDS
        assert len(list(reader)) == 3
    assert (tmp_path / "loss_msle" / "best.ckpt").exists()
