"""Image decoding, VGG-style preprocessing and feature extraction.

The backbone is pluggable: production loads a frozen VGG16-topology
network from an ONNX file, while tests use a synthetic extractor built
from grid-cell image statistics so the suite never downloads weights.
"""

from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ArtifactError, DecodeError, DimensionError, DomainError, NumericError, VocabularyError

TARGET_SIZE = 224

# Per-channel RGB means of the ImageNet training set, the constants
# used by the classic VGG preprocessing.
IMAGENET_MEANS = (123.68, 116.779, 103.939)

# Monitoring locations present in the source data, in a fixed order
# that defines the one-hot encoding.
CITIES = (
    "Tamil Nadu",
    "Mumbai",
    "Knowledge Park",
    "New Industrial Town",
    "ITO",
    "Bengaluru",
    "Dimapur",
)

META_DIM = len(CITIES) + 2 + 7  # one-hot city + cyclic hour + one-hot weekday


@dataclass(frozen=True)
class RawImage:
    """Decoded RGB pixel grid, values 0..255."""

    height: int
    width: int
    pixels: np.ndarray

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise DomainError(f"image dimensions must be positive, got {self.height}x{self.width}")
        if self.pixels.shape != (self.height, self.width, 3):
            raise DimensionError(
                "pixel grid does not match declared dimensions",
                left=self.pixels.shape,
                right=(self.height, self.width, 3),
            )
        if self.pixels.dtype != np.uint8:
            raise DomainError(f"pixels must be uint8, got {self.pixels.dtype}")


@dataclass(frozen=True)
class PreprocessedImage:
    """224x224x3 float grid, mean-subtracted. Built by preprocess()."""

    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (TARGET_SIZE, TARGET_SIZE, 3):
            raise DimensionError(
                "preprocessed image has wrong shape",
                left=self.values.shape,
                right=(TARGET_SIZE, TARGET_SIZE, 3),
            )


@dataclass(frozen=True)
class MetadataRecord:
    """City plus an hour-resolution timestamp for one observation."""

    city: str
    timestamp: datetime


def decode_image(data: bytes) -> RawImage:
    """Decode PNG or JPEG bytes into an RGB grid.

    Grayscale images are replicated across the three channels; an
    alpha channel, if present, is dropped.
    """
    fmt = "unknown"
    try:
        with Image.open(io.BytesIO(data)) as img:
            fmt = img.format or "unknown"
            rgb = img.convert("RGB")
            pixels = np.asarray(rgb, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise DecodeError(f"unsupported or corrupt image data: {exc}") from exc
    except OSError as exc:
        raise DecodeError(f"failed to decode {fmt} image: {exc}") from exc
    height, width = pixels.shape[:2]
    return RawImage(height=height, width=width, pixels=pixels)


def _resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize.

    Output pixel (i, j) samples the source at
    (i * (H-1) / (out_h-1), j * (W-1) / (out_w-1)); a singleton output
    or source axis collapses to coordinate 0. At equal sizes the map
    is the identity.
    """
    src_h, src_w = pixels.shape[:2]
    ys = (
        np.linspace(0.0, src_h - 1.0, out_h)
        if out_h > 1 and src_h > 1
        else np.zeros(out_h)
    )
    xs = (
        np.linspace(0.0, src_w - 1.0, out_w)
        if out_w > 1 and src_w > 1
        else np.zeros(out_w)
    )
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    grid = pixels.astype(np.float64)
    top = grid[y0][:, x0] * (1.0 - wx) + grid[y0][:, x1] * wx
    bottom = grid[y1][:, x0] * (1.0 - wx) + grid[y1][:, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def preprocess(raw: RawImage) -> PreprocessedImage:
    """Resize to 224x224 and subtract the per-channel ImageNet means."""
    resized = _resize_bilinear(raw.pixels, TARGET_SIZE, TARGET_SIZE)
    resized -= np.asarray(IMAGENET_MEANS)
    return PreprocessedImage(values=resized)


def global_average_pool(maps: np.ndarray) -> np.ndarray:
    """Collapse h x w x c feature maps to a length-c vector of means."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise DimensionError(
            "feature maps must be 3-dimensional", left=maps.shape, right="(h, w, c)"
        )
    if maps.shape[0] < 1 or maps.shape[1] < 1:
        raise DomainError(f"feature map spatial dims must be >= 1, got {maps.shape}")
    return maps.mean(axis=(0, 1))


class FeatureExtractor:
    """Frozen backbone interface: preprocessed image in, feature maps out."""

    name: str
    output_dim: int

    def feature_maps(self, img: PreprocessedImage) -> np.ndarray:
        raise NotImplementedError

    def fingerprint(self) -> str:
        """Checksum of the extractor's defining state, for frozen checks."""
        raise NotImplementedError


class SyntheticExtractor(FeatureExtractor):
    """Deterministic stand-in backbone built from image statistics.

    The image is cut into a grid_size x grid_size grid; each cell
    contributes its per-channel mean and variance. Means occupy the
    first half of the vector (cell-major, channel-minor), variances
    the second half, emitted as a 1x1xD map so pooling passes them
    through unchanged. The seed only names the instance; the statistics
    themselves are seed-independent.
    """

    def __init__(self, seed: int, grid_size: int = 4):
        if grid_size < 1:
            raise DomainError(f"grid_size must be >= 1, got {grid_size}")
        self.seed = int(seed)
        self.grid_size = int(grid_size)
        self.name = f"synthetic-{self.seed}-g{self.grid_size}"
        self.output_dim = 2 * 3 * self.grid_size**2

    def feature_maps(self, img: PreprocessedImage) -> np.ndarray:
        g = self.grid_size
        edges = np.linspace(0, TARGET_SIZE, g + 1).astype(np.intp)
        means = np.empty((g * g, 3))
        variances = np.empty((g * g, 3))
        for row in range(g):
            for col in range(g):
                cell = img.values[edges[row]:edges[row + 1], edges[col]:edges[col + 1]]
                means[row * g + col] = cell.mean(axis=(0, 1))
                variances[row * g + col] = cell.var(axis=(0, 1))
        stats = np.concatenate([means.reshape(-1), variances.reshape(-1)])
        return stats.reshape(1, 1, -1)

    def fingerprint(self) -> str:
        payload = f"{self.name}:{self.output_dim}".encode()
        return hashlib.sha256(payload).hexdigest()


class OnnxExtractor(FeatureExtractor):
    """VGG16-topology backbone loaded from an ONNX file.

    The graph must take an input named "input" shaped [1, 224, 224, 3]
    and emit final convolutional feature maps. Requires the optional
    onnxruntime dependency.
    """

    def __init__(self, path: str, output_dim: int = 512, name: str = "vgg16-onnx"):
        try:
            import onnxruntime  # noqa: PLC0415 -- optional heavy dependency
        except ImportError as exc:
            raise ArtifactError(
                "onnxruntime is not installed; install the 'onnx' extra to "
                "use a file-based backbone"
            ) from exc
        try:
            with open(path, "rb") as fh:
                model_bytes = fh.read()
            self._session = onnxruntime.InferenceSession(
                model_bytes, providers=["CPUExecutionProvider"]
            )
        except Exception as exc:  # ORT raises its own exception hierarchy
            raise ArtifactError(f"failed to load backbone from {path!r}: {exc}") from exc
        self.name = name
        self.output_dim = int(output_dim)
        self._fingerprint = hashlib.sha256(model_bytes).hexdigest()

    def feature_maps(self, img: PreprocessedImage) -> np.ndarray:
        batch = img.values[None].astype(np.float32)
        outputs = self._session.run(None, {"input": batch})
        maps = np.asarray(outputs[0], dtype=np.float64)
        if maps.ndim == 4 and maps.shape[0] == 1:
            maps = maps[0]
        if maps.ndim != 3:
            raise DimensionError(
                "backbone output is not a feature-map stack",
                left=maps.shape,
                right="(h, w, c)",
            )
        return maps

    def fingerprint(self) -> str:
        return self._fingerprint


def synthetic_extractor(seed: int, grid_size: int = 4) -> FeatureExtractor:
    return SyntheticExtractor(seed, grid_size=grid_size)


def extract_features(img: PreprocessedImage, extractor: FeatureExtractor) -> np.ndarray:
    """Pool the backbone's feature maps into a fixed-length vector."""
    vector = global_average_pool(extractor.feature_maps(img))
    if vector.shape != (extractor.output_dim,):
        raise DimensionError(
            f"extractor {extractor.name!r} output does not match its declared size",
            left=vector.shape,
            right=(extractor.output_dim,),
        )
    return vector


def encode_metadata(record: MetadataRecord) -> np.ndarray:
    """Encode city and timestamp as a 16-float vector.

    Layout: one-hot city (7), then (sin, cos) of the hour angle
    2*pi*h/24, then one-hot day-of-week (7, Monday first).
    """
    if record.city not in CITIES:
        raise VocabularyError(
            f"unknown city {record.city!r}", value=record.city, allowed=list(CITIES)
        )
    city_block = np.zeros(len(CITIES))
    city_block[CITIES.index(record.city)] = 1.0
    angle = 2.0 * math.pi * record.timestamp.hour / 24.0
    hour_block = np.array([math.sin(angle), math.cos(angle)])
    day_block = np.zeros(7)
    day_block[record.timestamp.weekday()] = 1.0
    return np.concatenate([city_block, hour_block, day_block])


def fuse(features: np.ndarray, meta: np.ndarray) -> np.ndarray:
    """Concatenate backbone features (first) with encoded metadata."""
    features = np.asarray(features, dtype=np.float64).reshape(-1)
    meta = np.asarray(meta, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(features)) or not np.all(np.isfinite(meta)):
        raise NumericError("non-finite value in inputs", where="fuse")
    return np.concatenate([features, meta])
