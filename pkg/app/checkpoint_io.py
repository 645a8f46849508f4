"""
Checkpoint files.

Layout: a magic line, one line of JSON header (config snapshot, standardizer,
output scale, vocabulary, epoch, RNG and optimizer bookkeeping), then one
section per array:

    <name> f64 <ndim> <extent> ... <extent>\\n<raw little-endian float64 payload>
"""

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from errors import DatasetIOError, ParseError
from model import MultimodalWeightPredictor
from physics_features import Standardizer
from run_config import RunConfig

logger = logging.getLogger(__name__)

MAGIC = b"MWPCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    header: dict
    arrays: dict

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under `prefix.`, keyed without the prefix."""
        start = len(prefix) + 1
        return {k[start:]: v for k, v in self.arrays.items() if k.startswith(prefix + ".")}

    @property
    def epoch(self) -> int:
        return int(self.header.get("epoch", 0))


def write_checkpoint(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Write atomically: a temporary sibling file is renamed over `path`."""
    path = Path(path)
    header = {**header, "format_version": FORMAT_VERSION, "sections": len(arrays)}
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(MAGIC + f" {FORMAT_VERSION}\n".encode("ascii"))
            f.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            for name, value in arrays.items():
                if any(ch.isspace() for ch in name):
                    raise ParseError(f"section name {name!r} contains whitespace")
                arr = np.ascontiguousarray(value, dtype="<f8")
                extents = " ".join(str(e) for e in arr.shape)
                f.write(f"{name} f64 {arr.ndim} {extents}".rstrip().encode("ascii") + b"\n")
                f.write(arr.tobytes())
        os.replace(tmp, path)
    except OSError as e:
        raise DatasetIOError(f"Cannot write checkpoint {path}: {e}") from e
    return path


def _read_line(raw: bytes, pos: int, path: Path) -> tuple[bytes, int]:
    end = raw.find(b"\n", pos)
    if end < 0:
        raise ParseError(f"{path}: truncated checkpoint")
    return raw[pos:end], end + 1


def read_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise DatasetIOError(f"Checkpoint not found: {path}") from None
    except OSError as e:
        raise DatasetIOError(f"Cannot read checkpoint {path}: {e}") from e

    line, pos = _read_line(raw, 0, path)
    if not line.startswith(MAGIC):
        raise ParseError(f"{path}: not a checkpoint file")
    header_line, pos = _read_line(raw, pos, path)
    try:
        header = json.loads(header_line)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: bad checkpoint header: {e}") from e

    arrays = {}
    for _ in range(int(header.get("sections", 0))):
        line, pos = _read_line(raw, pos, path)
        parts = line.decode("ascii").split()
        if len(parts) < 3 or parts[1] != "f64" or len(parts) != 3 + int(parts[2]):
            raise ParseError(f"{path}: malformed section header {line!r}")
        shape = tuple(int(e) for e in parts[3:])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        payload = raw[pos:pos + nbytes]
        if len(payload) != nbytes:
            raise ParseError(f"{path}: section '{parts[0]}' is truncated")
        arrays[parts[0]] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
    logger.debug("Read checkpoint %s (%d sections)", path, len(arrays))
    return Checkpoint(header, arrays)


def save_model(path: str | Path, model: MultimodalWeightPredictor, run_cfg: RunConfig, vocabulary: list[str], header: dict | None = None,
               arrays: dict[str, np.ndarray] | None = None) -> Path:
    """Model parameters plus everything needed to rebuild the model for inference."""
    full_header = {
        "config": run_cfg.to_dict(),
        "vocabulary": list(vocabulary),
        "standardizer": model.standardizer.to_dict() if model.standardizer else None,
        "output_scale": model.output_scale,
        **(header or {}),
    }
    all_arrays = {f"param.{name}": value for name, value in model.params.arrays().items()}
    all_arrays.update(arrays or {})
    return write_checkpoint(path, full_header, all_arrays)


def load_model(path: str | Path, use_ema: bool = True):
    """
    Rebuild a model from a checkpoint.

    Args:
        path: checkpoint file
        use_ema (bool): load the EMA shadow weights when the checkpoint has them

    Returns:
        (MultimodalWeightPredictor, Checkpoint, RunConfig)
    """
    ckpt = read_checkpoint(path)
    run_cfg = RunConfig.from_dict(ckpt.header["config"]).validate()
    vocabulary = ckpt.header["vocabulary"]
    model = MultimodalWeightPredictor(run_cfg.model_config(len(vocabulary)), seed=run_cfg.train.seed)
    ema = ckpt.group("ema")
    model.params.load(ema if use_ema and ema else ckpt.group("param"))
    if ckpt.header.get("standardizer"):
        model.standardizer = Standardizer.from_dict(ckpt.header["standardizer"])
    model.output_scale = float(ckpt.header.get("output_scale", 1.0))
    return model, ckpt, run_cfg
