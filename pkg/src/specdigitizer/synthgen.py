"""Deterministic synthetic spectra plots with exact ground truth.

Scenes are stacked spectra: each line is a sum of Gaussian/Lorentzian peaks
on a constant offset, drawn anti-aliased inside an L-shaped pair of axes with
tick marks and 5x7 bitmap tick labels underneath the x axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from scipy.ndimage import gaussian_filter

from .axes import BBox
from .errors import InvalidScene
from .font import GLYPH_H, render_text
from .raster import RasterImage, stretch_columns

# tab10 plus black; every pair is >= 30 apart in RGB L2 and far from white.
PALETTE: tuple[tuple[int, int, int], ...] = (
    (31, 119, 180), (255, 127, 14), (44, 160, 44), (214, 39, 40),
    (148, 103, 189), (140, 86, 75), (227, 119, 194), (127, 127, 127),
    (188, 189, 34), (23, 190, 207), (0, 0, 0),
)
MIN_COLOR_DISTANCE = 30.0
CURVE_MARGIN = 4
LABEL_GAP = 3


@dataclass(frozen=True)
class PeakSpec:
    center: float
    amplitude: float
    width: float
    shape: str = "gaussian"

    def __post_init__(self):
        if self.amplitude <= 0 or self.width <= 0:
            raise InvalidScene("peak amplitude and width must be positive")
        if self.shape not in ("gaussian", "lorentzian"):
            raise InvalidScene(f"unknown peak shape {self.shape!r}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        u = (np.asarray(x, dtype=np.float64) - self.center) / self.width
        if self.shape == "gaussian":
            return self.amplitude * np.exp(-0.5 * u * u)
        return self.amplitude / (1.0 + u * u)


@dataclass(frozen=True)
class LineSpec:
    """One plot line. ``offset`` and peak amplitudes are fractions of the plot height."""

    peaks: tuple[PeakSpec, ...] = ()
    offset: float = 0.5
    color: tuple[int, int, int] = (0, 0, 0)
    stroke_width: int = 2

    def profile(self, x_data: np.ndarray) -> np.ndarray:
        y = np.full(np.shape(x_data), float(self.offset))
        for p in self.peaks:
            y = y + p(x_data)
        return y


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one synthetic plot.

    Geometry is in pixels: ``origin`` is the axis intersection (x of the y
    axis, y of the x axis); the plot region spans columns
    ``origin[0] .. plot_right - 1`` and rows ``plot_top .. origin[1]``.
    Data x maps linearly onto columns, with ``x_range`` giving the data
    value at the first and last plot column.
    """

    lines: tuple[LineSpec, ...]
    width: int = 560
    height: int = 420
    origin: tuple[int, int] = (64, 360)
    plot_right: int = 540
    plot_top: int = 30
    x_range: tuple[float, float] = (0.0, 475.0)
    ticks: tuple[tuple[int, float], ...] = ()
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0
    seed: int = 0
    tick_length: int = 5
    glyph_scale: int = 1
    axis_color: tuple[int, int, int] = (0, 0, 0)
    draw_ticks: bool = True
    draw_labels: bool = True
    hard_overlap: bool = False

    @property
    def region(self) -> BBox:
        return BBox(self.origin[0], self.plot_top, self.plot_right, self.origin[1] + 1)

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.origin[0], self.plot_right)

    def x_data(self, px) -> np.ndarray:
        x0, x1 = self.origin[0], self.plot_right - 1
        t = (np.asarray(px, dtype=np.float64) - x0) / (x1 - x0)
        return self.x_range[0] + t * (self.x_range[1] - self.x_range[0])

    def y_pixels(self, frac: np.ndarray) -> np.ndarray:
        oy = self.origin[1]
        return oy - np.asarray(frac, dtype=np.float64) * (oy - self.plot_top)


@dataclass
class GroundTruth:
    """Exact answer for a scene; ``lines[k][i]`` is the y px of line k at column ``region.x0 + i``."""

    region: BBox
    origin: tuple[int, int]
    ticks: list[tuple[int, float]]
    lines: list[np.ndarray]
    colors: list[tuple[int, int, int]] = field(default_factory=list)
    stroke_widths: list[int] = field(default_factory=list)

    @property
    def x_start(self) -> int:
        return self.region.x0


def line_traces(spec: SceneSpec) -> list[np.ndarray]:
    cols = spec.columns
    return [spec.y_pixels(ln.profile(spec.x_data(cols))) for ln in spec.lines]


def validate_scene(spec: SceneSpec) -> None:
    if not 1 <= len(spec.lines) <= 10:
        raise InvalidScene("a scene holds between 1 and 10 lines")
    ox, oy = spec.origin
    if not (0 <= ox < spec.plot_right <= spec.width and 0 <= spec.plot_top < oy < spec.height):
        raise InvalidScene("plot region does not fit the canvas")
    if spec.plot_right - ox < 8 or oy - spec.plot_top < 8:
        raise InvalidScene("plot region too small")
    if not spec.hard_overlap:
        cols = [np.array(ln.color, dtype=float) for ln in spec.lines]
        for i in range(len(cols)):
            for j in range(i + 1, len(cols)):
                if np.linalg.norm(cols[i] - cols[j]) < MIN_COLOR_DISTANCE:
                    raise InvalidScene(f"lines {i} and {j} have near-identical colors")
    lo = spec.plot_top + CURVE_MARGIN
    hi = oy - CURVE_MARGIN
    for k, y in enumerate(line_traces(spec)):
        if not np.all(np.isfinite(y)) or y.min() < lo or y.max() > hi:
            raise InvalidScene(f"line {k} leaves the plot region")


def _paint(canvas: np.ndarray, alpha: np.ndarray, color) -> None:
    a = alpha[..., None]
    canvas *= 1.0 - a
    canvas += a * np.asarray(color, dtype=np.float64)


def _stroke_alpha(spec: SceneSpec, line: LineSpec, subsample: int = 4) -> np.ndarray:
    x0, x1 = spec.origin[0], spec.plot_right - 1
    xs = np.linspace(x0, x1, (x1 - x0) * subsample + 1)
    ys = spec.y_pixels(line.profile(spec.x_data(xs)))
    pts = np.rint(np.stack([xs, ys], axis=1) * 16).astype(np.int32)
    mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
    cv2.polylines(mask, [pts], False, 255, thickness=max(1, int(line.stroke_width)),
                  lineType=cv2.LINE_AA, shift=4)
    return mask.astype(np.float64) / 255.0


def format_tick(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return f"{value:g}"


def render_layers(spec: SceneSpec) -> tuple[np.ndarray, list[np.ndarray]]:
    """Noise-free float canvas plus the per-line coverage masks."""
    canvas = np.full((spec.height, spec.width, 3), 255.0)
    ox, oy = spec.origin
    axis = np.zeros((spec.height, spec.width))
    axis[oy, ox:spec.plot_right] = 1.0
    axis[spec.plot_top:oy + 1, ox] = 1.0
    if spec.draw_ticks:
        for px, _ in spec.ticks:
            axis[oy + 1:oy + 1 + spec.tick_length, px] = 1.0
    if spec.draw_labels:
        top = oy + spec.tick_length + LABEL_GAP
        for px, value in spec.ticks:
            glyphs = render_text(format_tick(value), spec.glyph_scale)
            h, w = glyphs.shape
            left = px - w // 2
            if left < 0 or left + w > spec.width or top + h > spec.height:
                raise InvalidScene(f"tick label {value} does not fit the canvas")
            axis[top:top + h, left:left + w] = np.maximum(axis[top:top + h, left:left + w], glyphs)
    _paint(canvas, axis, spec.axis_color)
    alphas = []
    for line in spec.lines:
        alpha = _stroke_alpha(spec, line)
        _paint(canvas, alpha, line.color)
        alphas.append(alpha)
    return canvas, alphas


def generate_scene(spec: SceneSpec) -> tuple[RasterImage, GroundTruth]:
    """Render ``spec``; identical specs give bit-identical images."""
    validate_scene(spec)
    canvas, _ = render_layers(spec)
    if spec.blur_sigma > 0:
        canvas = gaussian_filter(canvas, sigma=(spec.blur_sigma, spec.blur_sigma, 0), mode="nearest")
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, canvas.shape)
    img = RasterImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    gt = GroundTruth(
        region=spec.region,
        origin=(spec.origin[0], spec.origin[1]),
        ticks=[(int(px), float(v)) for px, v in spec.ticks],
        lines=line_traces(spec),
        colors=[tuple(ln.color) for ln in spec.lines],
        stroke_widths=[int(ln.stroke_width) for ln in spec.lines],
    )
    return img, gt


# -- random scene distributions ---------------------------------------------

_NICE_STEPS = (1.0, 2.0, 2.5, 5.0)


def _tick_layout(rng: np.random.Generator, x0: int, x1: int) -> tuple[tuple[float, float], tuple]:
    """Integer-pixel ticks with round values; returns (x_range, ticks)."""
    span = x1 - 1 - x0
    n_ticks = int(rng.integers(4, 7))
    spacing = int(rng.integers(span // (n_ticks + 1), span // n_ticks + 1))
    step = float(rng.choice(_NICE_STEPS)) * 10.0 ** int(rng.integers(0, 3))
    if step != int(step):
        step *= 2
    start_value = step * int(rng.integers(0, 40))
    first_px = x0 + int(rng.integers(4, max(5, span - spacing * (n_ticks - 1) - 4)))
    ticks = []
    px, value = first_px, start_value
    while px <= x1 - 4:
        ticks.append((px, value))
        px += spacing
        value += step
    scale = step / spacing
    x_range = (start_value - (first_px - x0) * scale, start_value + (x1 - 1 - first_px) * scale)
    return x_range, tuple(ticks)


def _max_slope(y: np.ndarray) -> float:
    return float(np.abs(np.diff(y)).max()) if len(y) > 1 else 0.0


def _random_geometry(rng: np.random.Generator) -> dict:
    width = int(rng.integers(480, 601))
    height = int(rng.integers(360, 441))
    ox = int(rng.integers(48, 72))
    oy = height - int(rng.integers(40, 56))
    return dict(width=width, height=height, origin=(ox, oy),
                plot_right=width - int(rng.integers(10, 26)),
                plot_top=int(rng.integers(12, 30)))


def random_scene(seed: int, line_count: int | None = None, *, m_range=(2, 6),
                 noise_sigma: float = 4.0, blur_sigma: float = 0.5,
                 max_slope: float = 5.0, min_gap: float = 4.0) -> SceneSpec:
    """Stacked-spectra scene drawn from the standard distribution.

    Peaks are rejected until every line's steepest column step is at most
    ``max_slope`` px/px and neighbouring lines keep ``min_gap`` px of clear
    space between their strokes.
    """
    rng = np.random.default_rng(seed)
    geo = _random_geometry(rng)
    m = int(line_count) if line_count is not None else int(rng.integers(m_range[0], m_range[1] + 1))
    colors = [PALETTE[i] for i in rng.permutation(len(PALETTE))[:m]]
    x_range, ticks = _tick_layout(rng, geo["origin"][0], geo["plot_right"])
    base = SceneSpec(lines=(), x_range=x_range, ticks=ticks, noise_sigma=noise_sigma,
                     blur_sigma=blur_sigma, seed=seed, **geo)
    plot_h = base.origin[1] - base.plot_top
    span = x_range[1] - x_range[0]
    margin = (CURVE_MARGIN + 4) / plot_h
    band = (1.0 - 2 * margin) / m
    widths = [int(w) for w in rng.choice([1, 2, 2, 3], size=m)]

    lines: list[LineSpec] = []
    for k in range(m):
        offset = margin + k * band + float(rng.uniform(0.0, 0.15)) * band
        room = margin + (k + 1) * band - offset
        peaks = []
        for _ in range(int(rng.integers(0, 5))):
            for _attempt in range(20):
                pk = PeakSpec(
                    center=float(x_range[0] + rng.uniform(0.05, 0.95) * span),
                    amplitude=float(rng.uniform(0.15, 0.75) * room),
                    width=float(rng.uniform(0.012, 0.07) * span),
                    shape=str(rng.choice(["gaussian", "lorentzian"])),
                )
                trial = LineSpec(tuple(peaks + [pk]), offset, colors[k], widths[k])
                y = base.y_pixels(trial.profile(base.x_data(base.columns)))
                if _max_slope(y) <= max_slope and trial.profile(base.x_data(base.columns)).max() <= offset + room:
                    peaks.append(pk)
                    break
        lines.append(LineSpec(tuple(peaks), offset, colors[k], widths[k]))

    spec = replace(base, lines=tuple(lines))
    traces = line_traces(spec)
    # Shrink any line that comes too close to the one above it.
    for k in range(m - 1):
        for _ in range(30):
            gap = traces[k] - traces[k + 1] - (widths[k] + widths[k + 1]) / 2.0
            if gap.min() >= min_gap:
                break
            ln = lines[k]
            lines[k] = replace(ln, peaks=tuple(replace(p, amplitude=p.amplitude * 0.8) for p in ln.peaks))
            spec = replace(spec, lines=tuple(lines))
            traces = line_traces(spec)
    validate_scene(spec)
    return spec


def sharp_peak_scene(seed: int, *, min_slope: float = 24.0, max_slope: float = 32.0,
                     noise_sigma: float = 4.0, blur_sigma: float = 0.5) -> SceneSpec:
    """Scene where every line carries a narrow peak steeper than ``min_slope`` px/px."""
    rng = np.random.default_rng(seed)
    geo = _random_geometry(rng)
    m = int(rng.integers(1, 3))
    colors = [PALETTE[i] for i in rng.permutation(len(PALETTE))[:m]]
    x_range, ticks = _tick_layout(rng, geo["origin"][0], geo["plot_right"])
    base = SceneSpec(lines=(), x_range=x_range, ticks=ticks, noise_sigma=noise_sigma,
                     blur_sigma=blur_sigma, seed=seed, **geo)
    plot_h = base.origin[1] - base.plot_top
    span = x_range[1] - x_range[0]
    px_per_data = (base.plot_right - 1 - base.origin[0]) / span
    margin = (CURVE_MARGIN + 4) / plot_h
    band = (1.0 - 2 * margin) / m
    widths = [int(w) for w in rng.choice([1, 2, 2, 3], size=m)]
    slots = rng.permutation(m)
    lines = []
    for k in range(m):
        offset = margin + k * band + 0.05 * band
        # Tall peaks, kept inside the line's own band: missing one moves the
        # mean trace error by several px without causing line swaps.
        amp = float(rng.uniform(0.7, 0.85)) * band
        amp_px = amp * plot_h
        target = float(rng.uniform(min_slope + 0.5, max_slope))
        # Steepest column step of a Gaussian is ~ amp / (sigma * sqrt(e)).
        sigma_px = amp_px / (target * math.sqrt(math.e))
        center = float(x_range[0] + (0.2 + 0.6 * (slots[k] + rng.uniform(0.25, 0.75)) / m) * span)
        peaks = [PeakSpec(center, amp, sigma_px / px_per_data, "gaussian")]
        for _ in range(int(rng.integers(0, 3))):
            peaks.append(PeakSpec(float(x_range[0] + rng.uniform(0.05, 0.95) * span),
                                  float(rng.uniform(0.02, 0.08) * band),
                                  float(rng.uniform(0.02, 0.06) * span), "gaussian"))
        lines.append(LineSpec(tuple(peaks), offset, colors[k], widths[k]))
    spec = replace(base, lines=tuple(lines))
    validate_scene(spec)
    return spec


def standard_suite(count: int, seed: int = 0, **kwargs) -> list[SceneSpec]:
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=count)
    return [random_scene(int(s), **kwargs) for s in seeds]


def sharp_peak_suite(seed: int = 1, size: int = 20, **kwargs) -> list[tuple[RasterImage, GroundTruth]]:
    """Scenes whose steepest ground-truth step is at least 15 px/px."""
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**31 - 1, size=size)
    return [generate_scene(sharp_peak_scene(int(s), **kwargs)) for s in seeds]


def stretch_trace(y: np.ndarray, factor: int) -> np.ndarray:
    """Resample a column-indexed trace as if the image were stretched ``factor`` times along x."""
    return stretch_columns(np.asarray(y, dtype=np.float64)[None, :], factor)[0]


# -- probability-map degradation ---------------------------------------------

def line_masks(gt: GroundTruth, box: BBox, pad: float = 1.5) -> list[np.ndarray]:
    """Per-line pixel masks inside ``box``: pixels within stroke/2 + pad of a trace (vertically)."""
    h, w = box.height, box.width
    rows = np.arange(box.y0, box.y1)[:, None]
    masks = []
    for k, y in enumerate(gt.lines):
        yy = _trace_in_box(gt, y, box)
        half = (gt.stroke_widths[k] if gt.stroke_widths else 2) / 2.0 + pad
        lo = np.minimum(yy, np.roll(yy, 1))
        hi = np.maximum(yy, np.roll(yy, 1))
        lo[0], hi[0] = yy[0], yy[0]
        m = (rows >= lo[None, :] - half) & (rows <= hi[None, :] + half)
        masks.append(m.reshape(h, w))
    return masks


def _trace_in_box(gt: GroundTruth, y: np.ndarray, box: BBox) -> np.ndarray:
    cols = np.arange(box.x0, box.x1)
    idx = np.clip(cols - gt.x_start, 0, len(y) - 1)
    return y[idx]


def degrade_probmap(values: np.ndarray, gt: GroundTruth, box: BBox, seed: int, *,
                    hole_width: int = 20, salt_fraction: float = 0.005,
                    line: int | None = None) -> tuple[np.ndarray, int, tuple[int, int]]:
    """Cut a ``hole_width``-column gap out of one line and sprinkle salt foreground.

    Returns the degraded map, the ablated line index and the hole's column
    range (crop coordinates).
    """
    rng = np.random.default_rng(seed)
    out = np.array(values, dtype=np.float64, copy=True)
    h, w = out.shape
    k = int(rng.integers(0, len(gt.lines))) if line is None else line
    start = int(rng.integers(w // 10, max(w // 10 + 1, w - w // 10 - hole_width)))
    masks = line_masks(gt, box, pad=5.0)
    others = np.zeros_like(masks[k])
    for j, m in enumerate(masks):
        if j != k:
            others |= m
    hole = np.zeros((h, w), dtype=bool)
    hole[:, start:start + hole_width] = True
    out[hole & masks[k] & ~others] = 0.0
    salt = rng.random((h, w)) < salt_fraction
    out[salt] = 1.0
    return out, k, (start, start + hole_width)
