"""Axis-line detection and plot-region alignment.

A coarse plot box (from :func:`propose_plot_region` or an external
detector) is refined by snapping its left and bottom edges onto the nearest
probabilistic-Hough segment that is parallel to the edge and long enough.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import NoAxesFound
from .raster import GrayImage, RasterImage, to_grayscale


@dataclass(frozen=True)
class BBox:
    """Pixel box, top-left inclusive and bottom-right exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def origin(self) -> tuple[int, int]:
        """Bottom-left corner pixel, where the axes meet."""
        return (self.x0, self.y1 - 1)

    def within(self, width: int, height: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def clipped(self, width: int, height: int) -> "BBox":
        return BBox(max(0, self.x0), max(0, self.y0), min(width, self.x1), min(height, self.y1))

    def as_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1}


@dataclass(frozen=True)
class HoughLine:
    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def length(self) -> float:
        return math.hypot(self.x1 - self.x0, self.y1 - self.y0)

    @property
    def angle(self) -> float:
        """Direction in [0, pi), measured in image coordinates (y down)."""
        return math.atan2(self.y1 - self.y0, self.x1 - self.x0) % math.pi

    @property
    def mid(self) -> tuple[float, float]:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def cos2(self, direction: tuple[float, float]) -> float:
        """Squared cosine similarity with ``direction``; orientation sign is irrelevant."""
        dx, dy = self.x1 - self.x0, self.y1 - self.y0
        ex, ey = direction
        n = math.hypot(dx, dy) * math.hypot(ex, ey)
        if n == 0:
            return 0.0
        c = (dx * ex + dy * ey) / n
        return c * c


HORIZONTAL = (1.0, 0.0)
VERTICAL = (0.0, 1.0)


@dataclass(frozen=True)
class AxisPair:
    x_axis: HoughLine
    y_axis: HoughLine
    origin: tuple[int, int]


@dataclass(frozen=True)
class AxisParams:
    eps1: float = 0.98
    eps2: float = 0.5
    hough_threshold: int = 40
    min_line_length: int = 30
    max_line_gap: int = 3
    dark_threshold: float = 200.0

    def __post_init__(self):
        if not (0 < self.eps1 <= 1 and 0 < self.eps2 <= 1):
            raise ValueError("eps1 and eps2 must lie in (0, 1]")


@dataclass(frozen=True)
class Refinement:
    """Outcome of :func:`refine_box`; a flagged edge had no admissible candidate."""

    box: BBox
    axes: AxisPair
    left_flagged: bool
    bottom_flagged: bool
    left_distance: float | None
    bottom_distance: float | None


def _ink_mask(g: GrayImage, p: AxisParams) -> np.ndarray:
    v = g.values
    if v.max() - v.min() < 1e-9:
        return np.zeros(v.shape, dtype=bool)
    otsu, _ = cv2.threshold(np.clip(np.rint(v), 0, 255).astype(np.uint8), 0, 255,
                            cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    return v <= min(float(otsu), p.dark_threshold)


def _extend(profile: np.ndarray, a: int, b: int, max_gap: int) -> tuple[int, int]:
    """Grow ``[a, b]`` along a 1-D ink profile, bridging gaps of up to ``max_gap`` pixels."""
    n = len(profile)
    ink = np.flatnonzero(profile)
    if ink.size == 0:
        return a, b
    # Split the ink positions into runs separated by gaps wider than max_gap.
    breaks = np.flatnonzero(np.diff(ink) > max_gap + 1)
    starts = np.concatenate([[ink[0]], ink[breaks + 1]])
    ends = np.concatenate([ink[breaks], [ink[-1]]])
    for lo, hi in zip(starts, ends):
        if hi >= a - max_gap - 1 and lo <= b + max_gap + 1:
            a, b = min(a, int(lo)), max(b, int(hi))
    return max(0, a), min(n - 1, b)


def _extend_axis_parallel(lines: list[HoughLine], ink: np.ndarray, max_gap: int = 8) -> list[HoughLine]:
    """Stretch exactly horizontal/vertical segments over the collinear ink around them.

    The probabilistic transform erases the pixels of every accepted segment
    and only votes on a random subset, so an axis crossed by thick curves can
    come back in pieces or partly missing. Each axis-parallel segment is
    extended along its row (column) through ink runs separated by at most
    ``max_gap`` pixels; segments that end up identical are kept once.
    """
    out: list[HoughLine] = []
    seen: set[tuple[float, float, float, float]] = set()
    for ln in lines:
        if ln.y0 == ln.y1:
            row = int(ln.y0)
            a, b = _extend(ink[row, :], *sorted((int(ln.x0), int(ln.x1))), max_gap)
            ln = HoughLine(float(a), float(row), float(b), float(row))
        elif ln.x0 == ln.x1:
            col = int(ln.x0)
            a, b = _extend(ink[:, col], *sorted((int(ln.y0), int(ln.y1))), max_gap)
            ln = HoughLine(float(col), float(a), float(col), float(b))
        key = (ln.x0, ln.y0, ln.x1, ln.y1)
        if key not in seen:
            seen.add(key)
            out.append(ln)
    return out


def detect_line_segments(g: GrayImage, p: AxisParams = AxisParams()) -> list[HoughLine]:
    """Probabilistic Hough segments over the dark-pixel map, longest first.

    Axis-parallel segments are extended over collinear ink so that axes
    split by crossing strokes come back whole (see :func:`_extend_axis_parallel`).
    """
    ink = _ink_mask(g, p)
    if not ink.any():
        return []
    raw = cv2.HoughLinesP(ink.astype(np.uint8) * 255, 1, np.pi / 180, p.hough_threshold,
                          minLineLength=p.min_line_length, maxLineGap=p.max_line_gap)
    if raw is None:
        return []
    lines = [HoughLine(*map(float, r)) for r in raw.reshape(-1, 4)]
    lines = _extend_axis_parallel([ln for ln in lines if ln.length > 0], ink)
    lines.sort(key=lambda ln: (-ln.length, ln.y0, ln.x0, ln.y1, ln.x1))
    return lines


def edge_score(img: GrayImage, box: BBox) -> float:
    """Summed intensity along the box's bottom row and left column (darker is lower)."""
    v = img.values
    return float(v[box.y1 - 1, box.x0:box.x1].sum() + v[box.y0:box.y1, box.x0].sum())


def _content_mask(img: RasterImage, threshold: float = 40.0) -> np.ndarray:
    px = img.pixels.reshape(-1, 3)
    bg = np.array([np.bincount(px[:, c], minlength=256).argmax() for c in range(3)], dtype=float)
    dist = np.linalg.norm(img.pixels.astype(np.float64) - bg, axis=2)
    return dist > threshold


def propose_plot_region(img: RasterImage, p: AxisParams = AxisParams(),
                        lines: list[HoughLine] | None = None) -> BBox:
    """Heuristic plot box: bottommost long horizontal and leftmost long vertical segment.

    The top and right extents come from the non-background content above and
    to the right of the axis corner.
    """
    if lines is None:
        lines = detect_line_segments(to_grayscale(img), p)
    horiz = [ln for ln in lines if ln.cos2(HORIZONTAL) > p.eps1 and ln.length >= p.eps2 * img.width]
    vert = [ln for ln in lines if ln.cos2(VERTICAL) > p.eps1 and ln.length >= p.eps2 * img.height]
    if not horiz or not vert:
        raise NoAxesFound("no long horizontal/vertical segment pair")
    x_axis = max(horiz, key=lambda ln: (ln.mid[1], ln.length))
    y_axis = min(vert, key=lambda ln: (ln.mid[0], -ln.length))
    ox = int(round(y_axis.mid[0]))
    oy = int(round(x_axis.mid[1]))
    content = _content_mask(img)
    above = content[:oy + 1, ox:]
    cols = np.flatnonzero(above.any(axis=0))
    rows = np.flatnonzero(above.any(axis=1))
    if cols.size == 0 or rows.size == 0:
        raise NoAxesFound("no content above/right of the axis corner")
    x1 = ox + int(cols[-1]) + 1
    y0 = int(rows[0])
    if x1 - ox < 2 or oy + 1 - y0 < 2:
        raise NoAxesFound("axis corner leaves no plot area")
    return BBox(ox, y0, x1, oy + 1)


def _best_candidate(lines, direction, edge_len, coord_of, target, p: AxisParams):
    best = None
    for ln in lines:
        if ln.cos2(direction) <= p.eps1:
            continue
        if ln.length / edge_len <= p.eps2:
            continue
        d = abs(coord_of(ln) - target)
        key = (d, -ln.length)
        if best is None or key < best[0]:
            best = (key, ln)
    return None if best is None else best[1]


def refine_box(box: BBox, lines: list[HoughLine], p: AxisParams = AxisParams()) -> Refinement:
    """Snap the left/bottom edges of ``box`` onto the nearest admissible Hough segments.

    A segment is admissible for an edge when its squared cosine with the edge
    direction exceeds ``eps1`` and its length exceeds ``eps2`` times the edge
    length. Among admissible segments the one with the smallest perpendicular
    offset wins (ties go to the longer segment). Edges without candidates stay
    put and are flagged. Top and right edges never move.
    """
    left = _best_candidate(lines, VERTICAL, box.height, lambda ln: ln.mid[0], box.x0, p)
    bottom = _best_candidate(lines, HORIZONTAL, box.width, lambda ln: ln.mid[1], box.y1 - 1, p)

    x0, y1 = box.x0, box.y1
    left_d = bottom_d = None
    if left is not None:
        left_d = abs(left.mid[0] - box.x0)
        cand = int(round(left.mid[0]))
        if cand < box.x1:
            x0 = cand
    if bottom is not None:
        bottom_d = abs(bottom.mid[1] - (box.y1 - 1))
        cand = int(round(bottom.mid[1])) + 1
        if cand > box.y0:
            y1 = cand
    new = BBox(x0, box.y0, box.x1, y1)
    origin = new.origin
    y_axis = left if left is not None else HoughLine(x0, box.y0, x0, y1 - 1)
    x_axis = bottom if bottom is not None else HoughLine(x0, y1 - 1, box.x1 - 1, y1 - 1)
    return Refinement(new, AxisPair(x_axis, y_axis, origin), left is None, bottom is None,
                      left_d, bottom_d)
