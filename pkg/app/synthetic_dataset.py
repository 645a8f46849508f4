"""
Synthetic stand-in for the waste weight dataset: statistics-matched records
with procedural images, CSV + PPM storage, stratified splits and a batch
loader with training-time augmentation.
"""

import csv
import hashlib
import json
import logging
import math
import queue
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import yaml

from errors import ConfigError, ContractError, DatasetIOError, DomainError, ParseError, VocabularyError
from image_ops import augment, read_ppm, render_image, stable_hash, write_ppm
from physics_features import RawGeometry, feature_audit, features_for

logger = logging.getLogger(__name__)

CSV_HEADER = ["id", "category", "L_x", "L_y", "L_z", "D_x", "D_y", "weight_kg", "image_path"]
DEFAULT_CATEGORIES = Path(__file__).resolve().parent.parent / "data" / "categories.yaml"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CategorySpec:
    name: str
    share: float
    weight_min: float
    weight_max: float
    volume_min: float
    volume_max: float
    texture_seed: int
    reference_count: int = 0
    density_band: tuple = (0.0, 0.0)
    nominal_density: float = 0.0

    @property
    def constant_weight(self) -> bool:
        return self.weight_min == self.weight_max

    @property
    def constant_volume(self) -> bool:
        return self.volume_min == self.volume_max


@dataclass
class GeneratorConfig:
    categories: list
    geometry: dict
    weights: dict
    source: str = ""

    @property
    def vocabulary(self) -> list[str]:
        return [c.name for c in self.categories]

    def spec_for(self, name: str) -> CategorySpec:
        for spec in self.categories:
            if spec.name == name:
                return spec
        raise VocabularyError(f"Unknown category '{name}'")

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry,
            "weights": self.weights,
            "categories": [
                {
                    "name": c.name, "share": c.share, "reference_count": c.reference_count,
                    "weight_min": c.weight_min, "weight_max": c.weight_max,
                    "volume_min": c.volume_min, "volume_max": c.volume_max,
                    "texture_seed": c.texture_seed,
                    "density_band": list(c.density_band), "nominal_density": c.nominal_density,
                }
                for c in self.categories
            ],
        }

    @classmethod
    def load(cls, path: str | Path = DEFAULT_CATEGORIES) -> "GeneratorConfig":
        """
        Load the generator configuration and derive the per-category density bands.

        Args:
            path: YAML file with geometry, weights and categories sections

        Returns:
            GeneratorConfig
        """
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = yaml.safe_load(f)
        except FileNotFoundError:
            raise DatasetIOError(f"Generator config not found: {path}") from None
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid generator config {path}: {e}") from e
        return cls.from_dict(raw, source=str(path))

    @classmethod
    def from_dict(cls, raw: dict, source: str = "") -> "GeneratorConfig":
        for key in ("geometry", "weights", "categories"):
            if key not in raw:
                raise ConfigError(f"Generator config is missing '{key}'")
        weights = raw["weights"]
        clip_lo = weights["density_clip"]["min"]
        clip_hi = weights["density_clip"]["max"]
        fill = weights["fill_factor"]
        mean_fill = 0.5 * (fill["min"] + fill["max"])

        specs = []
        for entry in raw["categories"]:
            w_min, w_max = float(entry["weight_min"]), float(entry["weight_max"])
            v_min, v_max = float(entry["volume_min"]), float(entry["volume_max"])
            if not (0 < w_min <= w_max and 0 < v_min <= v_max):
                raise ConfigError(f"Category '{entry.get('name')}' has an invalid weight/volume range")
            band_lo = min(max(w_min / v_max, clip_lo), clip_hi)
            band_hi = max(min(w_max / v_min, clip_hi), band_lo)
            # densities at the two extremes of the table row, compensated for the mean fill
            nominal = math.sqrt((w_min / v_min) * (w_max / v_max)) / mean_fill
            specs.append(CategorySpec(
                name=str(entry["name"]),
                share=float(entry["share"]),
                weight_min=w_min,
                weight_max=w_max,
                volume_min=v_min,
                volume_max=v_max,
                texture_seed=int(entry["texture_seed"]),
                reference_count=int(entry.get("reference_count", 0)),
                density_band=(band_lo, band_hi),
                nominal_density=min(max(nominal, band_lo), band_hi),
            ))

        total = sum(s.share for s in specs)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"Category shares must sum to 1, got {total:.8f}")
        if len({s.name for s in specs}) != len(specs):
            raise ConfigError("Category names must be unique")
        return cls(categories=specs, geometry=raw["geometry"], weights=weights, source=source)


@dataclass(eq=False)
class WasteRecord:
    id: str
    category: str
    category_index: int
    geometry: RawGeometry
    weight_kg: float
    image: np.ndarray = field(repr=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WasteRecord):
            return NotImplemented
        return (self.id == other.id and self.category == other.category
                and self.category_index == other.category_index
                and self.geometry == other.geometry and self.weight_kg == other.weight_kg
                and np.array_equal(self.image, other.image))


def largest_remainder(total: int, shares: Sequence[float]) -> list[int]:
    """Integer allocation of `total` proportional to `shares`; ties go to the earlier entry."""
    norm = sum(shares)
    quotas = [total * s / norm for s in shares]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(shares)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:total - sum(counts)]:
        counts[i] += 1
    return counts


def _clip(value: float, bounds: dict) -> float:
    return float(min(max(value, bounds["min"]), bounds["max"]))


def sample_record(record_id: str, spec: CategorySpec, index: int, cfg: GeneratorConfig,
                  rng: np.random.Generator, side: int) -> WasteRecord:
    geo, wts = cfg.geometry, cfg.weights
    unit = float(geo["volume_unit_per_m3"])

    if spec.constant_volume:
        v_m3 = spec.volume_min * math.exp(rng.normal(0.0, geo["volume_jitter"]))
    else:
        v_m3 = math.exp(rng.uniform(math.log(spec.volume_min), math.log(spec.volume_max)))
    noise = rng.normal(0.0, geo["aspect_sigma"], size=3)
    noise -= noise.mean()
    base = (v_m3 * unit) ** (1.0 / 3.0)
    l_x = _clip(base * math.exp(noise[0]), geo["L_x"])
    l_y = _clip(base * math.exp(noise[1]), geo["L_y"])
    l_z = _clip(base * math.exp(noise[2]), geo["L_z"])
    d_x = _clip(rng.normal(geo["D_x"]["mean"], geo["D_x"]["std"]), geo["D_x"])
    d_y = _clip(rng.normal(geo["D_y"]["mean"], geo["D_y"]["std"]), geo["D_y"])

    if spec.constant_weight:
        weight = spec.weight_min
    else:
        lo, hi = spec.density_band
        density = min(max(spec.nominal_density * math.exp(rng.normal(0.0, wts["density_sigma"])), lo), hi)
        fill = rng.uniform(wts["fill_factor"]["min"], wts["fill_factor"]["max"])
        actual_m3 = l_x * l_y * l_z / unit
        weight = density * actual_m3 * fill
    weight = min(max(weight, spec.weight_min, wts["min"]), spec.weight_max, wts["max"])

    image = render_image(record_id, l_x, l_y, l_z, d_x, spec.texture_seed, side)
    return WasteRecord(record_id, spec.name, index, RawGeometry(l_x, l_y, l_z, d_x, d_y), float(weight), image)


def generate(cfg: GeneratorConfig, n: int, seed: int, side: int = 32) -> list[WasteRecord]:
    """
    Generate `n` records with per-category counts proportional to the shares.

    Each record draws from its own generator seeded by (seed, position), so the
    dataset is bitwise reproducible and records can be built independently.
    """
    n_categories = len(cfg.categories)
    if n < n_categories:
        raise ConfigError(f"n={n} is too small to cover all {n_categories} categories")
    counts = largest_remainder(n, [c.share for c in cfg.categories])
    for i, count in enumerate(counts):
        if count == 0:
            donor = max(range(n_categories), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] = 1

    labels = np.repeat(np.arange(n_categories), counts)
    np.random.default_rng(seed).shuffle(labels)
    records = []
    for position, label in enumerate(labels):
        spec = cfg.categories[int(label)]
        rng = np.random.default_rng([seed, position])
        records.append(sample_record(f"r{position:05d}", spec, int(label), cfg, rng, side))
    logger.info("Generated %d records over %d categories", len(records), n_categories)
    return records


@dataclass
class SplitIndex:
    train: list
    val: list
    test: list

    def ids(self, split: str) -> list[str]:
        if split not in SPLITS:
            raise ConfigError(f"Unknown split '{split}' (expected one of {', '.join(SPLITS)})")
        return getattr(self, split)

    def to_dict(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, payload: dict) -> "SplitIndex":
        return cls(list(payload["train"]), list(payload["val"]), list(payload["test"]))


def stratified_split(records: Sequence[WasteRecord], fractions=(0.70, 0.15, 0.15), seed: int = 0) -> SplitIndex:
    """
    Per-category split with largest-remainder rounding.

    Membership depends only on (ids, categories, seed), not on record order.
    Categories with fewer than 3 samples go entirely to train.
    """
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError(f"Split fractions must be three non-negative values summing to 1, got {fractions}")
    by_category: dict[str, list[str]] = {}
    for r in records:
        by_category.setdefault(r.category, []).append(r.id)

    split = SplitIndex([], [], [])
    for category in sorted(by_category):
        ids = sorted(by_category[category])
        if len(ids) < 3:
            logger.warning("Category '%s' has only %d samples; all assigned to train", category, len(ids))
            split.train.extend(ids)
            continue
        rng = np.random.default_rng([seed, stable_hash(category)])
        shuffled = [ids[i] for i in rng.permutation(len(ids))]
        n_train, n_val, _ = largest_remainder(len(ids), fractions)
        split.train.extend(shuffled[:n_train])
        split.val.extend(shuffled[n_train:n_train + n_val])
        split.test.extend(shuffled[n_train + n_val:])
    for ids in (split.train, split.val, split.test):
        ids.sort()
    return split


def save_dataset(records: Sequence[WasteRecord], path: str | Path) -> Path:
    """
    Write metadata CSV + one PPM per record. The category column holds the
    1-based vocabulary index.
    """
    root = Path(path)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        with open(root / "metadata.csv", "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_HEADER)
            for r in records:
                image_path = f"images/{r.id}.ppm"
                g = r.geometry
                writer.writerow([r.id, r.category_index + 1, repr(float(g.L_x)), repr(float(g.L_y)),
                                 repr(float(g.L_z)), repr(float(g.D_x)), repr(float(g.D_y)),
                                 repr(float(r.weight_kg)), image_path])
                write_ppm(root / image_path, r.image)
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset to {root}: {e}") from e
    return root


def read_vocabulary(root: Path) -> list[str] | None:
    path = Path(root) / "vocabulary.txt"
    if not path.exists():
        return None
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_vocabulary(root: Path, vocabulary: Sequence[str]) -> None:
    Path(root).mkdir(parents=True, exist_ok=True)
    (Path(root) / "vocabulary.txt").write_text("\n".join(vocabulary) + "\n", encoding="utf-8")


def load_dataset(path: str | Path, vocabulary: Sequence[str] | None = None,
                 csv_name: str = "metadata.csv") -> list[WasteRecord]:
    """
    Load records from a dataset directory (or a CSV following the same schema).

    Args:
        path: dataset directory, or a CSV file whose image paths are relative to it
        vocabulary: category names in index order; defaults to the directory's
            vocabulary.txt, then to the generator config

    Returns:
        list[WasteRecord]
    """
    path = Path(path)
    csv_path = path if path.is_file() else path / csv_name
    root = csv_path.parent
    vocabulary = list(vocabulary or read_vocabulary(root) or GeneratorConfig.load().vocabulary)

    try:
        f = open(csv_path, "r", encoding="utf-8", newline="")
    except OSError as e:
        raise DatasetIOError(f"Cannot open dataset CSV {csv_path}: {e}") from e

    records = []
    with f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise ParseError(f"expected header {','.join(CSV_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            records.append(_parse_row(row, line, vocabulary, root))
    logger.info("Loaded %d records from %s", len(records), csv_path)
    return records


def _parse_row(row: list[str], line: int, vocabulary: Sequence[str], root: Path) -> WasteRecord:
    if len(row) != len(CSV_HEADER):
        raise ParseError(f"expected {len(CSV_HEADER)} columns, got {len(row)}", line=line)
    record_id, category, *numbers, image_path = row
    try:
        l_x, l_y, l_z, d_x, d_y, weight = (float(v) for v in numbers)
    except ValueError:
        raise ParseError(f"non-numeric value in {numbers}", line=line) from None
    try:
        geometry = RawGeometry(l_x, l_y, l_z, d_x, d_y).validate()
    except DomainError as e:
        raise ParseError(str(e), line=line) from None
    if not math.isfinite(weight) or weight < 0:
        raise ParseError(f"weight_kg must be non-negative, got {weight}", line=line)

    if category.isdigit():
        index = int(category) - 1
        if not 0 <= index < len(vocabulary):
            raise VocabularyError(f"line {line}: category index {category} is outside 1..{len(vocabulary)}")
        name = vocabulary[index]
    else:
        if category not in vocabulary:
            raise VocabularyError(f"line {line}: unknown category '{category}'")
        name, index = category, list(vocabulary).index(category)

    image_file = root / image_path
    if not image_file.exists():
        raise DatasetIOError(f"Image for record '{record_id}' not found: {image_file}")
    return WasteRecord(record_id, name, index, geometry, weight, read_ppm(image_file))


@dataclass
class DatasetArrays:
    """Column view of a record list: images, raw features, categories, weights."""

    ids: list
    images: np.ndarray
    features: np.ndarray
    categories: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, ids: Sequence[str]) -> "DatasetArrays":
        position = {rid: i for i, rid in enumerate(self.ids)}
        try:
            rows = np.array([position[rid] for rid in ids], dtype=np.int64)
        except KeyError as e:
            raise ConfigError(f"Record {e} from the split index is not in the dataset") from None
        return DatasetArrays(list(ids), self.images[rows], self.features[rows],
                             self.categories[rows], self.weights[rows])

    def with_features(self, features: np.ndarray) -> "DatasetArrays":
        return DatasetArrays(self.ids, self.images, features, self.categories, self.weights)


def stack_records(records: Sequence[WasteRecord]) -> DatasetArrays:
    feats = [features_for(r.geometry, r.category_index) for r in records]
    return DatasetArrays(
        ids=[r.id for r in records],
        images=np.stack([r.image for r in records]),
        features=np.stack([f.as_array() for f in feats]),
        categories=np.array([r.category_index for r in records], dtype=np.int64),
        weights=np.array([r.weight_kg for r in records], dtype=np.float64),
    )


@dataclass
class Batch:
    images: np.ndarray
    features: np.ndarray
    categories: np.ndarray
    weights: np.ndarray


class BatchLoader:
    """
    Mini-batches over a DatasetArrays view.

    Shuffling and augmentation draw from generators seeded by (seed, epoch)
    and (seed, epoch, row), so batch contents do not depend on whether a
    worker thread prepares them.
    """

    def __init__(self, data: DatasetArrays, batch_size: int, training: bool, augment_images: bool = False,
                 photometric: bool = False, seed: int = 0, threads: int = 1, prefetch: int = 4):
        if augment_images and not training:
            raise ContractError("Augmentation is only allowed on the training split")
        if len(data) == 0:
            raise ConfigError("Cannot build a loader over an empty split")
        self.data = data
        self.batch_size = batch_size
        self.training = training
        self.augment_images = augment_images
        self.photometric = photometric
        self.seed = seed
        self.threads = threads
        self.prefetch = prefetch

    def __len__(self) -> int:
        return math.ceil(len(self.data) / self.batch_size)

    def _batches(self, epoch: int) -> Iterator[Batch]:
        n = len(self.data)
        order = np.random.default_rng([self.seed, epoch]).permutation(n) if self.training else np.arange(n)
        for start in range(0, n, self.batch_size):
            rows = order[start:start + self.batch_size]
            images = self.data.images[rows]
            if self.augment_images:
                images = np.stack([
                    augment(img, np.random.default_rng([self.seed, epoch, int(row)]),
                            photometric=self.photometric)
                    for img, row in zip(images, rows)
                ])
            yield Batch(images, self.data.features[rows], self.data.categories[rows], self.data.weights[rows])

    def epoch(self, epoch: int = 0) -> Iterator[Batch]:
        """
        Yield the batches of one epoch. With threads > 1 a worker prepares them
        ahead; closing the iterator early stops and joins that worker.
        """
        if self.threads <= 1:
            yield from self._batches(epoch)
            return

        buffer: queue.Queue = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()
        done = object()

        def put(item) -> bool:
            while not stop.is_set():
                try:
                    buffer.put(item, timeout=0.05)
                    return True
                except queue.Full:
                    continue
            return False

        def produce():
            try:
                for batch in self._batches(epoch):
                    if not put(batch):
                        return
            except Exception as e:  # surfaced on the consumer side
                put(e)
                return
            put(done)

        worker = threading.Thread(target=produce, name=f"batch-loader-{epoch}", daemon=True)
        worker.start()
        try:
            while True:
                item = buffer.get()
                if item is done:
                    break
                if isinstance(item, Exception):
                    raise item
                yield item
        finally:
            stop.set()
            while True:
                try:
                    buffer.get_nowait()
                except queue.Empty:
                    break
            worker.join()


def write_split_index(path: str | Path, split: SplitIndex) -> Path:
    path = Path(path)
    payload = {**split.to_dict(), "sha256": split.digest()}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    except OSError as e:
        raise DatasetIOError(f"Cannot write split index {path}: {e}") from e
    return path


def read_split_index(path: str | Path, expected_hash: str | None = None) -> SplitIndex:
    """
    Load a split index; when `expected_hash` is given the ids must hash to it.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetIOError(f"Split index not found: {path}") from None
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetIOError(f"Cannot read split index {path}: {e}") from e
    split = SplitIndex.from_dict(payload)
    if expected_hash is not None and split.digest() != expected_hash:
        raise ConfigError(f"Split index {path} does not match the checkpoint: expected split hash {expected_hash}, "
                          f"found {split.digest()}")
    return split


def write_dataset_bundle(records: Sequence[WasteRecord], path: str | Path, cfg: GeneratorConfig) -> Path:
    """
    Dataset directory as `generate` leaves it: metadata.csv, images/,
    vocabulary.txt, generator_config.yaml and feature_audit.csv.
    """
    root = save_dataset(records, path)
    write_vocabulary(root, cfg.vocabulary)
    try:
        with open(root / "generator_config.yaml", "w", encoding="utf-8") as f:
            yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
        with open(root / "feature_audit.csv", "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["feature_name", "pearson_r_vs_log_weight", "selected"])
            writer.writeheader()
            writer.writerows(feature_audit([r.geometry for r in records], [r.weight_kg for r in records]))
    except OSError as e:
        raise DatasetIOError(f"Cannot write dataset files to {root}: {e}") from e
    return root
