import csv
import json
import threading
from collections import Counter

import numpy as np
import pytest

from errors import ConfigError, ContractError, DatasetIOError, ParseError, VocabularyError
from synthetic_dataset import (CSV_HEADER, BatchLoader, GeneratorConfig, SplitIndex, generate, largest_remainder,
                               load_dataset, read_split_index, read_vocabulary, save_dataset, stack_records,
                               stratified_split, write_dataset_bundle, write_split_index)


def test_shares_reproduce_published_counts(generator_config):
    counts = largest_remainder(10421, [c.share for c in generator_config.categories])
    assert sum(counts) == 10421
    assert abs(counts[0] - 3512) <= 1
    assert counts == [3512, 3053, 1094, 802, 698, 334, 209, 198, 198, 198, 125]
    for count, c in zip(counts, generator_config.categories):
        assert abs(count - c.reference_count) <= 7


def test_largest_remainder_ties_go_to_earlier_entries():
    assert largest_remainder(4, [1, 1, 1]) == [2, 1, 1]
    assert largest_remainder(0, [0.5, 0.5]) == [0, 0]


def test_generate_covers_every_category(generator_config, small_records):
    assert len(small_records) == 88
    assert {r.category for r in small_records} == set(generator_config.vocabulary)
    counts = Counter(r.category for r in small_records)
    assert counts["Automotive Scrap"] == 29


def test_generate_is_reproducible(generator_config, small_records):
    again = generate(generator_config, 88, seed=3, side=16)
    assert again == small_records
    other = generate(generator_config, 88, seed=4, side=16)
    assert other != small_records


def test_records_respect_category_ranges(generator_config, small_records):
    for r in small_records:
        spec = generator_config.spec_for(r.category)
        assert spec.weight_min <= r.weight_kg <= spec.weight_max
        assert r.image.shape == (16, 16, 3)
        assert r.geometry.validate()


def test_constant_weight_categories(generator_config, small_records):
    for r in small_records:
        if r.category == "Battery":
            assert r.weight_kg == 152.0


def test_generate_needs_one_record_per_category(generator_config):
    with pytest.raises(ConfigError):
        generate(generator_config, 10, seed=0)


def test_shares_must_sum_to_one(generator_config):
    raw = generator_config.to_dict()
    raw["categories"][0]["share"] += 0.1
    with pytest.raises(ConfigError, match="sum to 1"):
        GeneratorConfig.from_dict(raw)


def test_unknown_category_name(generator_config):
    with pytest.raises(VocabularyError):
        generator_config.spec_for("Glass")


def test_split_sizes_within_one_per_category(small_records):
    split = stratified_split(small_records, (0.70, 0.15, 0.15), seed=3)
    by_id = {r.id: r.category for r in small_records}
    sizes = Counter(r.category for r in small_records)
    for name, fraction in zip(("train", "val", "test"), (0.70, 0.15, 0.15)):
        per_category = Counter(by_id[i] for i in split.ids(name))
        for category, n in sizes.items():
            if n >= 3:
                assert abs(per_category[category] - fraction * n) < 1.0


def test_split_partitions_ids(small_records):
    split = stratified_split(small_records, seed=3)
    all_ids = split.train + split.val + split.test
    assert sorted(all_ids) == sorted(r.id for r in small_records)
    assert len(set(all_ids)) == len(all_ids)


def test_split_ignores_record_order(small_records):
    forward = stratified_split(small_records, seed=11)
    backward = stratified_split(list(reversed(small_records)), seed=11)
    assert forward == backward
    assert forward.digest() == backward.digest()


def test_tiny_categories_go_to_train(small_records, caplog):
    split = stratified_split(small_records, seed=3)
    batteries = [r.id for r in small_records if r.category == "Battery"]
    assert set(batteries) <= set(split.train)
    assert "all assigned to train" in caplog.text


def test_bad_fractions():
    with pytest.raises(ConfigError):
        stratified_split([], (0.5, 0.5, 0.5))


def test_split_index_hash_check(tmp_path, small_records):
    split = stratified_split(small_records, seed=3)
    path = write_split_index(tmp_path / "split_index.json", split)
    assert json.loads(path.read_text())["sha256"] == split.digest()
    assert read_split_index(path, split.digest()) == split
    with pytest.raises(ConfigError, match="expected split hash deadbeef"):
        read_split_index(path, "deadbeef")


def test_dataset_round_trip(tmp_path, generator_config, small_records):
    root = write_dataset_bundle(small_records, tmp_path / "ds", generator_config)
    assert read_vocabulary(root) == generator_config.vocabulary
    assert (root / "feature_audit.csv").exists()
    loaded = load_dataset(root)
    assert loaded == small_records


def _write_csv(path, rows, header=CSV_HEADER):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def test_bad_header_is_line_one(tmp_path, generator_config):
    _write_csv(tmp_path / "metadata.csv", [], header=["id", "weight"])
    with pytest.raises(ParseError, match="line 1"):
        load_dataset(tmp_path, generator_config.vocabulary)


def test_malformed_row_reports_line(tmp_path, generator_config):
    _write_csv(tmp_path / "metadata.csv", [["r0", "1", "x", "1", "1", "1", "1", "5", "images/r0.ppm"]])
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(tmp_path, generator_config.vocabulary)


def test_non_positive_geometry_row(tmp_path, generator_config):
    _write_csv(tmp_path / "metadata.csv", [["r0", "1", "0", "1", "1", "1", "1", "5", "images/r0.ppm"]])
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(tmp_path, generator_config.vocabulary)


def test_unknown_category_row(tmp_path, generator_config):
    _write_csv(tmp_path / "metadata.csv", [["r0", "Glass", "1", "1", "1", "1", "1", "5", "images/r0.ppm"]])
    with pytest.raises(VocabularyError, match="Glass"):
        load_dataset(tmp_path, generator_config.vocabulary)


def test_missing_image_names_record(tmp_path, generator_config, small_records):
    root = save_dataset(small_records[:3], tmp_path / "ds")
    (root / "images" / f"{small_records[1].id}.ppm").unlink()
    with pytest.raises(DatasetIOError, match=small_records[1].id):
        load_dataset(root, generator_config.vocabulary)


def test_subset_unknown_id(small_records):
    arrays = stack_records(small_records)
    assert len(arrays.subset([small_records[0].id])) == 1
    with pytest.raises(ConfigError):
        arrays.subset(["nope"])


def test_loader_covers_split_once_per_epoch(small_records):
    arrays = stack_records(small_records)
    loader = BatchLoader(arrays, batch_size=16, training=True, seed=1)
    batches = list(loader.epoch(0))
    assert len(batches) == len(loader) == 6
    assert sorted(np.concatenate([b.weights for b in batches])) == sorted(arrays.weights)


def test_threaded_loader_matches_single_thread(small_records):
    arrays = stack_records(small_records)
    single = BatchLoader(arrays, 16, training=True, augment_images=True, seed=5)
    threaded = BatchLoader(arrays, 16, training=True, augment_images=True, seed=5, threads=2)
    for a, b in zip(single.epoch(2), threaded.epoch(2)):
        np.testing.assert_array_equal(a.images, b.images)
        np.testing.assert_array_equal(a.weights, b.weights)


def test_closing_epoch_early_stops_worker(small_records):
    arrays = stack_records(small_records)
    loader = BatchLoader(arrays, 4, training=True, augment_images=True, seed=1, threads=2, prefetch=1)
    batches = loader.epoch(7)
    next(batches)
    batches.close()
    assert not [t for t in threading.enumerate() if t.name == "batch-loader-7"]


def test_eval_loader_keeps_order_and_refuses_augmentation(small_records):
    arrays = stack_records(small_records)
    first = next(BatchLoader(arrays, 4, training=False).epoch(0))
    np.testing.assert_array_equal(first.weights, arrays.weights[:4])
    with pytest.raises(ContractError):
        BatchLoader(arrays, 4, training=False, augment_images=True)


def test_split_index_rejects_unknown_split():
    with pytest.raises(ConfigError):
        SplitIndex([], [], []).ids("holdout")
