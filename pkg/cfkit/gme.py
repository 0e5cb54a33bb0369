"""Image ingestion and the gradient-magnitude/edge (GME) input stack."""

import colorsys
import io
import logging
import re
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, PositiveInt, model_validator
from scipy import ndimage
from skimage.filters import threshold_otsu

from cfkit.exceptions import ConfigurationError, IngestionError

logger = logging.getLogger(__name__)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
RGB_MEAN = (0.485, 0.456, 0.406)
RGB_STD = (0.229, 0.224, 0.225)
GME_MEAN = 0.5
GME_STD = 0.5
LUMA = (0.299, 0.587, 0.114)
# |Gx|, |Gy| <= 4 on a [0, 1] image
MAGNITUDE_SCALE = 4.0 * np.sqrt(2.0)
GOLDEN_RATIO_CONJUGATE = 0.618033988749895


class ImageU8(BaseModel):
    """8-bit RGB image, row-major, interleaved (H, W, 3)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    width: PositiveInt
    height: PositiveInt
    data: np.ndarray

    @model_validator(mode="after")
    def _check_data(self) -> "ImageU8":
        if self.data.dtype != np.uint8 or self.data.shape != (self.height, self.width, 3):
            raise ConfigurationError(
                f"image data must be uint8 of shape ({self.height}, {self.width}, 3), "
                f"got {self.data.dtype} {self.data.shape}",
                field="data",
            )
        return self

    @classmethod
    def from_array(cls, data: np.ndarray) -> "ImageU8":
        data = np.ascontiguousarray(data, dtype=np.uint8)
        if data.ndim != 3:
            raise ConfigurationError(f"expected (H, W, 3) pixels, got shape {data.shape}", field="data")
        return cls(width=data.shape[1], height=data.shape[0], data=data)


class GmeStack(BaseModel):
    """Standardized network input (1, C, H, W) plus the raw GME maps when present."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tensor: np.ndarray
    magnitude: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None

    @property
    def channels(self) -> int:
        return int(self.tensor.shape[1])


# ------------------------------------------------------------------------- ingest

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_ppm(raw: bytes, path: str) -> ImageU8:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if m is None:
            raise IngestionError("truncated PPM header", path, offset=pos)
        fields.append((m.group(1), m.start(1)))
        pos = m.end(1)
    magic, (w_raw, w_at), (h_raw, h_at), (max_raw, max_at) = fields[0][0], fields[1], fields[2], fields[3]
    if magic != b"P6":
        raise IngestionError(f"unsupported PPM variant {magic!r}", path, offset=0)
    try:
        width, height, maxval = int(w_raw), int(h_raw), int(max_raw)
    except ValueError:
        raise IngestionError("non-numeric PPM header field", path, offset=w_at) from None
    if width <= 0 or height <= 0:
        raise IngestionError(f"invalid PPM size {width}x{height}", path, offset=w_at if width <= 0 else h_at)
    if maxval != 255:
        raise IngestionError(f"unsupported PPM maxval {maxval} (only 255)", path, offset=max_at)
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise IngestionError("missing whitespace after PPM header", path, offset=pos)
    start = pos + 1
    expected = width * height * 3
    payload = raw[start : start + expected]
    if len(payload) < expected:
        raise IngestionError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}", path, offset=start + len(payload)
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, 3).copy()
    return ImageU8(width=width, height=height, data=data)


def _parse_png(raw: bytes, path: str) -> ImageU8:
    # IHDR: length(4) type(4) width(4) height(4) depth(1) colour(1) at offset 8
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise IngestionError("missing IHDR chunk", path, offset=12)
    depth, colour = raw[24], raw[25]
    if depth != 8:
        raise IngestionError(f"unsupported PNG bit depth {depth} (only 8)", path, offset=24)
    if colour not in (2, 6):
        raise IngestionError(f"unsupported PNG colour type {colour} (only RGB/RGBA)", path, offset=25)
    try:
        with Image.open(io.BytesIO(raw)) as img:
            data = np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as e:
        raise IngestionError(f"cannot decode PNG: {e}", path, offset=33) from e
    return ImageU8.from_array(data)


def load_image(path: Union[str, Path]) -> ImageU8:
    """Decode a P6 PPM or an 8-bit RGB/RGBA PNG (alpha dropped)."""
    path = str(path)
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise IngestionError(f"cannot read file: {e.strerror}", path) from e
    if raw.startswith(b"P"):
        img = _parse_ppm(raw, path)
    elif raw.startswith(PNG_SIGNATURE):
        img = _parse_png(raw, path)
    else:
        raise IngestionError("unrecognized image format (expected P6 PPM or PNG)", path, offset=0)
    logger.debug("loaded %s: %dx%d", path, img.width, img.height)
    return img


def save_ppm(image: Union[ImageU8, np.ndarray], path: Union[str, Path]) -> None:
    """Write a binary P6 file."""
    data = image.data if isinstance(image, ImageU8) else np.ascontiguousarray(image, dtype=np.uint8)
    Image.fromarray(data).save(str(path), format="PPM")


# ---------------------------------------------------------------------------- GME


def to_gray(img: ImageU8) -> np.ndarray:
    """ITU-R 601 luma in [0, 1] as (1, 1, H, W) float64."""
    rgb = img.data.astype(np.float64) / 255.0
    gray = rgb @ np.asarray(LUMA)
    return gray[None, None]


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """sqrt(Gx^2 + Gy^2) with 3x3 Sobel stencils and replicate borders."""
    if gray.ndim != 4 or gray.shape[:2] != (1, 1):
        raise ConfigurationError(f"sobel_magnitude expects a (1, 1, H, W) tensor, got {gray.shape}")
    h, w = gray.shape[2:]
    if h < 3 or w < 3:
        raise ConfigurationError(f"sobel_magnitude needs at least 3x3 pixels, got {h}x{w}")
    plane = gray[0, 0].astype(np.float64)
    gx = ndimage.sobel(plane, axis=1, mode="nearest")
    gy = ndimage.sobel(plane, axis=0, mode="nearest")
    return np.hypot(gx, gy)[None, None]


def otsu_threshold(magnitude: np.ndarray) -> float:
    """Otsu over a 256-bin histogram of [0, max].

    With a single occupied bin there is nothing to separate and the threshold
    is the maximum, so a constant map is all edge or (when zero) handled by
    :func:`edge_map` as no edge.
    """
    peak = float(magnitude.max())
    counts, edges = np.histogram(magnitude, bins=256, range=(0.0, peak))
    centers = (edges[:-1] + edges[1:]) / 2
    # empty outer bins would give 0/0 class means
    occupied = np.flatnonzero(counts)
    if occupied.size <= 1:
        return peak
    span = slice(occupied[0], occupied[-1] + 1)
    return float(threshold_otsu(hist=(counts[span], centers[span])))


def edge_map(magnitude: np.ndarray, threshold: Optional[float] = None) -> np.ndarray:
    """1 where magnitude >= threshold else 0; Otsu picks the threshold when none is given."""
    if np.any(magnitude < 0):
        raise ConfigurationError("edge_map expects a non-negative magnitude")
    if threshold is None:
        if not np.any(magnitude > 0):
            return np.zeros_like(magnitude)
        threshold = otsu_threshold(magnitude)
        logger.debug("otsu threshold %.6g", threshold)
    return (magnitude >= threshold).astype(magnitude.dtype)


def build_gme_stack(
    img: ImageU8,
    input_channels: int = 5,
    edge_threshold: Optional[float] = None,
    dtype=np.float32,
) -> GmeStack:
    """RGB (+ magnitude + edge) scaled to [0, 1] then standardized channel-wise.

    With ``input_channels=3`` the GME maps are never computed.
    """
    if input_channels not in (3, 5):
        raise ConfigurationError(f"input_channels must be 3 or 5, got {input_channels}", field="input_channels")
    rgb = img.data.astype(np.float64).transpose(2, 0, 1)[None] / 255.0
    mean = np.asarray(RGB_MEAN)[None, :, None, None]
    std = np.asarray(RGB_STD)[None, :, None, None]
    rgb = (rgb - mean) / std
    if input_channels == 3:
        return GmeStack(tensor=rgb.astype(dtype))

    magnitude = sobel_magnitude(to_gray(img)) / MAGNITUDE_SCALE
    edges = edge_map(magnitude, edge_threshold)
    extra = (np.concatenate([magnitude, edges], axis=1) - GME_MEAN) / GME_STD
    tensor = np.concatenate([rgb, extra], axis=1).astype(dtype)
    return GmeStack(tensor=tensor, magnitude=magnitude, edges=edges)


# ------------------------------------------------------------------------ palette


def palette(num_classes: int) -> np.ndarray:
    """(K, 3) uint8 colours stepping the hue by the golden ratio."""
    colours = np.zeros((num_classes, 3), dtype=np.uint8)
    for k in range(num_classes):
        hue = (k * GOLDEN_RATIO_CONJUGATE) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.65, 0.95)
        colours[k] = (round(r * 255), round(g * 255), round(b * 255))
    return colours


def colorize(mask: np.ndarray, num_classes: int) -> ImageU8:
    """Map an (H, W) class-id mask to an RGB image."""
    if mask.ndim != 2:
        raise ConfigurationError(f"mask must be (H, W), got {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() >= num_classes):
        raise ConfigurationError(f"mask ids must lie in [0, {num_classes})")
    return ImageU8.from_array(palette(num_classes)[mask])
