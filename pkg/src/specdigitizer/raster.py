"""Image containers, grayscale conversion, gradients and the flow velocity field."""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import convolve1d, gaussian_filter

from .errors import DecodeFailure

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# Relative slack on the |gy| >= eps_g test: smoothing and differencing an exact
# ramp of slope eps_g can land a few ulps below it.
GRADIENT_RTOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB image, stored as an (H, W, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) pixels, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        object.__setattr__(self, "pixels", _frozen(px))

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def load(cls, path) -> "RasterImage":
        """Decode a PNG/JPEG file; alpha is composited over white."""
        try:
            with Image.open(path) as im:
                return cls(_to_rgb_array(im))
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise DecodeFailure(f"cannot decode {path}: {exc}") from exc

    @classmethod
    def from_bytes(cls, data: bytes) -> "RasterImage":
        try:
            with Image.open(io.BytesIO(data)) as im:
                return cls(_to_rgb_array(im))
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise DecodeFailure(f"cannot decode image bytes: {exc}") from exc

    def to_png_bytes(self) -> bytes:
        buf = io.BytesIO()
        Image.fromarray(self.pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_png_bytes())

    def crop(self, x0: int, y0: int, x1: int, y1: int) -> "RasterImage":
        return RasterImage(self.pixels[y0:y1, x0:x1].copy())


def _to_rgb_array(im: Image.Image) -> np.ndarray:
    im.load()
    if im.mode in ("RGBA", "LA", "PA") or (im.mode == "P" and "transparency" in im.info):
        rgba = np.asarray(im.convert("RGBA"), dtype=np.float64)
        alpha = rgba[..., 3:4] / 255.0
        rgb = rgba[..., :3] * alpha + 255.0 * (1.0 - alpha)
        return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance surface with values in [0, 255]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected 2-D values, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min(initial=0.0) < 0.0 or v.max(initial=0.0) > 255.0:
            raise ValueError("gray values must be finite and within [0, 255]")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class GradientField:
    gx: np.ndarray
    gy: np.ndarray

    def __post_init__(self):
        if self.gx.shape != self.gy.shape:
            raise ValueError("gx and gy must share a shape")
        object.__setattr__(self, "gx", _frozen(np.asarray(self.gx, dtype=np.float64)))
        object.__setattr__(self, "gy", _frozen(np.asarray(self.gy, dtype=np.float64)))


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Per-pixel vertical velocity of an iso-intensity curve, ``-gx / gy``.

    ``weight`` holds ``gy**2`` at valid pixels (zero elsewhere) so that callers
    can pool velocities over a neighbourhood as a least-squares estimate. The
    construction parameters are kept so the field can be rebuilt on a
    resampled image.
    """

    v: np.ndarray
    valid: np.ndarray
    weight: np.ndarray
    v_max: float
    eps_g: float
    smooth_sigma: float = 1.0

    def __post_init__(self):
        for name in ("v", "valid", "weight"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name))))

    @property
    def shape(self) -> tuple[int, int]:
        return self.v.shape


def to_grayscale(img: RasterImage) -> GrayImage:
    """ITU-R 601 luma: 0.299 R + 0.587 G + 0.114 B."""
    gray = img.pixels.astype(np.float64) @ LUMA_WEIGHTS
    return GrayImage(np.clip(gray, 0.0, 255.0))


def gradient_field(g: GrayImage, smooth_sigma: float = 1.0) -> GradientField:
    """Sobel gradients (per-pixel units) after optional Gaussian presmoothing.

    Interior pixels get the normalised 3x3 Sobel response, i.e. a central
    difference along the derivative axis combined with [1, 2, 1] / 4
    smoothing across it. Border rows/columns fall back to one-sided differences.
    """
    if smooth_sigma < 0:
        raise ValueError("smooth_sigma must be >= 0")
    f = g.values
    if smooth_sigma > 0:
        f = gaussian_filter(f, smooth_sigma, mode="nearest")
    tri = np.array([1.0, 2.0, 1.0]) / 4.0
    gx = _diff(convolve1d(f, tri, axis=0, mode="nearest"), axis=1)
    gy = _diff(convolve1d(f, tri, axis=1, mode="nearest"), axis=0)
    return GradientField(gx, gy)


def _diff(f: np.ndarray, axis: int) -> np.ndarray:
    if f.shape[axis] < 2:
        return np.zeros_like(f)
    return np.gradient(f, axis=axis, edge_order=1)


def velocity_field(grad: GradientField, v_max: float = 10.0, eps_g: float = 1.0,
                   smooth_sigma: float = 1.0) -> VelocityField:
    """Velocity ``-gx / gy`` where ``|gy| >= eps_g``, clamped to ``[-v_max, v_max]``.

    Pixels with ``|gy| < eps_g`` are flagged invalid and carry ``v = 0``.
    ``smooth_sigma`` is only recorded (it should match the sigma used to
    build ``grad``).
    """
    if v_max <= 0 or eps_g <= 0:
        raise ValueError("v_max and eps_g must be positive")
    gx, gy = grad.gx, grad.gy
    valid = np.abs(gy) >= eps_g * (1.0 - GRADIENT_RTOL)
    v = np.zeros_like(gx)
    np.divide(-gx, gy, out=v, where=valid)
    v = np.clip(v, -v_max, v_max)
    weight = np.where(valid, gy * gy, 0.0)
    return VelocityField(v, valid, weight, float(v_max), float(eps_g), float(smooth_sigma))


def velocity_from_image(img: RasterImage, v_max: float = 10.0, eps_g: float = 1.0,
                        smooth_sigma: float = 1.0) -> VelocityField:
    grad = gradient_field(to_grayscale(img), smooth_sigma)
    return velocity_field(grad, v_max, eps_g, smooth_sigma)


def stretch_columns(arr: np.ndarray, factor: int) -> np.ndarray:
    """Linearly resample ``arr`` along axis 1 so column ``x`` lands on ``x * factor``.

    The output has ``(W - 1) * factor + 1`` columns; original columns are
    reproduced exactly and the intermediate ones are interpolated.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be >= 1")
    arr = np.asarray(arr)
    if factor == 1 or arr.shape[1] < 2:
        return arr.copy()
    w = arr.shape[1]
    pos = np.arange((w - 1) * factor + 1) / factor
    lo = np.minimum(np.floor(pos).astype(int), w - 2)
    frac = pos - lo
    shape = [1] * arr.ndim
    shape[1] = -1
    frac = frac.reshape(shape)
    a = arr.astype(np.float64)
    return np.take(a, lo, axis=1) * (1.0 - frac) + np.take(a, lo + 1, axis=1) * frac
