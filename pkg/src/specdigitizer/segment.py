"""Foreground probability maps for the plot crop.

The classical segmenter scores each pixel by its RGB distance from the
dominant background colour. Maps produced elsewhere (e.g. by a neural
segmenter) are exchanged as 8-bit grayscale PNGs where ``value / 255`` is
the probability.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DecodeFailure, DimensionMismatch
from .raster import RasterImage

BCE_CLAMP = 1e-7
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class ProbabilityMap:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError("probability map must be 2-D")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def save(self, path) -> None:
        q = np.clip(np.rint(self.values * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(q, mode="L").save(path, format="PNG")


@dataclass(frozen=True, eq=False)
class SemanticMap:
    mask: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.mask, dtype=bool))
        m.setflags(write=False)
        object.__setattr__(self, "mask", m)

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def height(self) -> int:
        return self.mask.shape[0]


def background_color(pixels: np.ndarray) -> np.ndarray:
    """Per-channel mode of an (H, W, 3) uint8 array."""
    flat = pixels.reshape(-1, 3)
    return np.array([np.bincount(flat[:, c], minlength=256).argmax() for c in range(3)],
                    dtype=np.float64)


def despeckle(mask: np.ndarray, min_size: int) -> np.ndarray:
    """Drop 8-connected foreground components smaller than ``min_size`` pixels."""
    if min_size <= 1 or not mask.any():
        return mask.copy()
    labels, n = ndimage.label(mask, structure=EIGHT_CONNECTED)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    keep = sizes >= min_size
    keep[0] = False
    return keep[labels]


def classical_segment(plot: RasterImage, tau: float = 40.0, scale: float = 10.0,
                      min_component: int = 5) -> ProbabilityMap:
    """Logistic score of the distance to the background colour, minus speckles."""
    bg = background_color(plot.pixels)
    dist = np.linalg.norm(plot.pixels.astype(np.float64) - bg, axis=2)
    prob = 1.0 / (1.0 + np.exp(-(dist - tau) / scale))
    fg = prob >= 0.5
    speck = fg & ~despeckle(fg, min_component)
    prob[speck] = 0.0
    return ProbabilityMap(prob)


def load_probability_map(path, expected_dims: tuple[int, int] | None = None) -> ProbabilityMap:
    """Read an 8-bit grayscale PNG; ``expected_dims`` is ``(width, height)``."""
    try:
        with Image.open(path) as im:
            im.load()
            arr = np.asarray(im.convert("L"), dtype=np.float64)
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeFailure(f"cannot decode probability map {path}: {exc}") from exc
    if expected_dims is not None and (arr.shape[1], arr.shape[0]) != tuple(expected_dims):
        raise DimensionMismatch(
            f"{Path(path).name}: map is {arr.shape[1]}x{arr.shape[0]}, "
            f"expected {expected_dims[0]}x{expected_dims[1]}")
    return ProbabilityMap(arr / 255.0)


def binarize(m: ProbabilityMap, threshold: float = 0.5) -> SemanticMap:
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    return SemanticMap(m.values >= threshold, threshold)


def bce_score(pred: ProbabilityMap, gt: SemanticMap) -> float:
    """Mean binary cross-entropy of ``pred`` against the 0/1 map ``gt``."""
    if pred.values.shape != gt.mask.shape:
        raise DimensionMismatch(f"{pred.values.shape} vs {gt.mask.shape}")
    p = np.clip(pred.values, BCE_CLAMP, 1.0 - BCE_CLAMP)
    c = gt.mask
    loss = np.where(c, -np.log(p), -np.log1p(-p))
    return float(loss.mean())
