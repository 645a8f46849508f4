"""
Procedural rendering, training-time augmentation and pixel plumbing for the
square RGB images fed to the visual encoder. Pixels are floats in [0, 1],
arrays are (side, side, 3).
"""

import colorsys
import math
import zlib
from pathlib import Path

import numpy as np

from errors import DatasetIOError, DimensionError, ParseError

BACKGROUND = 128 / 255.0
# apparent volume V / D_x^2 (length units) that would fill the whole frame
APPARENT_REFERENCE = 100.0
APPARENT_EPS = 1e-9
MAX_FILL = 0.9

PIXEL_MEAN = np.array([0.485, 0.456, 0.406])
PIXEL_STD = np.array([0.229, 0.224, 0.225])

GOLDEN = 0.6180339887498949


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap pixels onto the 8-bit grid so PPM storage is lossless."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def stable_hash(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def category_color(texture_seed: int) -> np.ndarray:
    hue = (texture_seed * GOLDEN) % 1.0
    return np.array(colorsys.hsv_to_rgb(hue, 0.6, 0.75))


def silhouette_size(volume: float, d_x: float, aspect: float, side: int) -> tuple[int, int]:
    """Pixel width/height of the object rectangle; area is proportional to V / D_x^2."""
    apparent = volume / (d_x * d_x + APPARENT_EPS)
    area = side * side * min(MAX_FILL, apparent / APPARENT_REFERENCE)
    aspect = min(4.0, max(0.25, aspect))
    width = math.sqrt(area * aspect)
    height = area / width if width > 0 else 0.0
    return min(side, int(round(width))), min(side, int(round(height)))


def render_image(record_id: str, L_x: float, L_y: float, L_z: float, D_x: float,
                 texture_seed: int, side: int = 32) -> np.ndarray:
    """
    Render a centred rectangle with a category-keyed texture on a neutral background.

    The rectangle's pixel area follows the object's apparent volume V / D_x^2;
    its width:height follows L_x : L_z. Output is deterministic in its inputs.
    """
    img = np.full((side, side, 3), BACKGROUND)
    width, height = silhouette_size(L_x * L_y * L_z, D_x, L_x / L_z, side)
    if width < 1 or height < 1:
        return img

    pattern_rng = np.random.default_rng(texture_seed)
    fx, fy = pattern_rng.uniform(0.05, 0.45, size=2)
    noise_rng = np.random.default_rng([texture_seed, stable_hash(record_id)])

    top = (side - height) // 2
    left = (side - width) // 2
    yy, xx = np.mgrid[0:height, 0:width]
    stripes = 0.08 * np.sin(2.0 * np.pi * (fx * xx + fy * yy))
    patch = category_color(texture_seed) + stripes[..., None] + noise_rng.normal(0.0, 0.04, size=(height, width, 3))
    img[top:top + height, left:left + width] = patch
    return quantize(img)


def _nearest_resize(img: np.ndarray, side: int) -> np.ndarray:
    rows = np.minimum((np.arange(side) + 0.5) * img.shape[0] / side, img.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(side) + 0.5) * img.shape[1] / side, img.shape[1] - 1).astype(int)
    return img[rows][:, cols]


def _rotate_nearest(img: np.ndarray, degrees: float) -> np.ndarray:
    side = img.shape[0]
    theta = math.radians(degrees)
    c = (side - 1) / 2.0
    yy, xx = np.mgrid[0:side, 0:side]
    # inverse mapping: sample the source pixel for every output pixel
    src_x = math.cos(theta) * (xx - c) + math.sin(theta) * (yy - c) + c
    src_y = -math.sin(theta) * (xx - c) + math.cos(theta) * (yy - c) + c
    src_x = np.rint(src_x).astype(int)
    src_y = np.rint(src_y).astype(int)
    inside = (src_x >= 0) & (src_x < side) & (src_y >= 0) & (src_y < side)
    out = np.full_like(img, BACKGROUND)
    out[inside] = img[src_y[inside], src_x[inside]]
    return out


def _random_erase(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    side = img.shape[0]
    for _ in range(10):
        area = rng.uniform(0.02, 0.20) * side * side
        ratio = math.exp(rng.uniform(math.log(0.3), math.log(3.3)))
        h = int(round(math.sqrt(area * ratio)))
        w = int(round(math.sqrt(area / ratio)))
        if 0 < h < side and 0 < w < side:
            top = int(rng.integers(0, side - h + 1))
            left = int(rng.integers(0, side - w + 1))
            img = img.copy()
            img[top:top + h, left:left + w] = rng.random((h, w, 3))
            return img
    return img


def _photometric(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    brightness, contrast, saturation = rng.uniform(0.8, 1.2, size=3)
    img = img * brightness
    img = (img - img.mean()) * contrast + img.mean()
    gray = img.mean(axis=-1, keepdims=True)
    img = (img - gray) * saturation + gray
    if rng.random() < 0.1:
        img = np.repeat(img.mean(axis=-1, keepdims=True), 3, axis=-1)
    return img


def augment(img: np.ndarray, rng: np.random.Generator, enabled: bool = True,
            photometric: bool = False) -> np.ndarray:
    """
    Random resized crop (scale U(0.8, 1.0)) -> horizontal flip (p=0.5)
    -> rotation U(-15, 15) degrees -> random erasing (p=0.5, 2-20% of the area).

    Args:
        img (np.ndarray): (side, side, 3) pixels in [0, 1]
        rng (np.random.Generator): source of all randomness
        enabled (bool): False returns the image unchanged
        photometric (bool): also jitter brightness/contrast/saturation and grayscale

    Returns:
        np.ndarray: augmented image, same shape, pixels in [0, 1]
    """
    if not enabled:
        return img
    side = img.shape[0]

    crop = max(1, int(round(side * math.sqrt(rng.uniform(0.8, 1.0)))))
    top = int(rng.integers(0, side - crop + 1))
    left = int(rng.integers(0, side - crop + 1))
    out = _nearest_resize(img[top:top + crop, left:left + crop], side)

    if rng.random() < 0.5:
        out = out[:, ::-1]
    out = _rotate_nearest(out, rng.uniform(-15.0, 15.0))
    if rng.random() < 0.5:
        out = _random_erase(out, rng)
    if photometric:
        out = _photometric(out, rng)
    return np.clip(out, 0.0, 1.0)


def normalize_pixels(images: np.ndarray) -> np.ndarray:
    return (images - PIXEL_MEAN) / PIXEL_STD


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """(B, S, S, 3) -> (B, N, P*P*3), patches in row-major order."""
    if images.ndim == 3:
        images = images[None]
    b, side, side_w, ch = images.shape
    if side != side_w or side % patch:
        raise DimensionError(f"Image shape {images.shape[1:]} cannot be cut into {patch}x{patch} patches")
    grid = side // patch
    blocks = images.reshape(b, grid, patch, grid, patch, ch).transpose(0, 1, 3, 2, 4, 5)
    return blocks.reshape(b, grid * grid, patch * patch * ch)


def write_ppm(path: Path, img: np.ndarray) -> None:
    height, width, _ = img.shape
    payload = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
            f.write(payload)
    except OSError as e:
        raise DatasetIOError(f"Cannot write image {path}: {e}") from e


def read_ppm(path: Path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise DatasetIOError(f"Cannot read image {path}: {e}") from e

    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            if end < 0:
                raise ParseError(f"{path}: unterminated comment in PPM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PPM header")
        tokens.append(raw[start:pos])
    pos += 1

    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ParseError(f"{path}: expected an 8-bit binary PPM (P6, max 255)")
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except ValueError as e:
        raise ParseError(f"{path}: non-numeric PPM size {tokens[1]!r} x {tokens[2]!r}") from e
    expected = width * height * 3
    body = raw[pos:pos + expected]
    if len(body) != expected:
        raise ParseError(f"{path}: pixel payload has {len(body)} bytes, expected {expected}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3) / 255.0
