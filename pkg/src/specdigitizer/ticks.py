"""X-axis tick marks, tick labels and the pixel -> data calibration.

Label text comes either from the builtin template matcher (which reads the
5x7 bitmap font used by the synthetic generator) or from an external
recognizer process speaking line-delimited JSON over stdin/stdout.
"""

from __future__ import annotations

import base64
import json
import queue
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .axes import AxisPair, BBox
from .errors import InsufficientTicks, NonMonotonic, ParseFailure, RecognizerUnavailable
from .font import GLYPH_H, GLYPHS, trimmed
from .raster import GrayImage, RasterImage, to_grayscale

DARK = 128.0
MAX_TICK_LENGTH = 10
TICK_DEDUP_PX = 3
LABEL_STRIP_PX = 60
MIN_GLYPH_SCORE = 0.85
RECOGNIZER_TIMEOUT = 10.0
OUTLIER_GAIN = 10.0
# Residuals below this fraction of the largest tick value are rounding noise.
RESIDUAL_FLOOR = 1e-9


@dataclass(frozen=True)
class TextBox:
    bbox: BBox
    text: str = ""
    confidence: float | None = None

    @property
    def center_x(self) -> float:
        return (self.bbox.x0 + self.bbox.x1 - 1) / 2.0


@dataclass(frozen=True)
class TickLabel:
    anchor_px: float
    value: float


@dataclass(frozen=True)
class AxisCalibration:
    """Linear map ``value = a * px + b`` fitted to tick labels."""

    a: float
    b: float
    rms_residual: float
    dropped: tuple[int, ...] = ()

    def value(self, px):
        return self.a * np.asarray(px, dtype=np.float64) + self.b if np.ndim(px) else self.a * px + self.b

    def pixel(self, value):
        return (np.asarray(value, dtype=np.float64) - self.b) / self.a if np.ndim(value) else (value - self.b) / self.a


# -- geometry -----------------------------------------------------------------

def _axis_row(axes: AxisPair) -> int:
    return int(round(axes.x_axis.mid[1]))


def _axis_span(axes: AxisPair, width: int) -> tuple[int, int]:
    xs = (axes.x_axis.x0, axes.x_axis.x1)
    return max(0, int(np.floor(min(xs)))), min(width, int(np.ceil(max(xs))) + 1)


def detect_tick_marks(g: GrayImage, axes: AxisPair, max_length: int = MAX_TICK_LENGTH) -> list[float]:
    """Column positions of short dark strokes hanging below the x axis.

    Rows directly under the axis that are dark along most of its length are
    treated as axis thickness, not tick. Adjacent tick columns are merged and
    positions closer than 3 px deduplicated.
    """
    dark = g.values < DARK
    h, w = dark.shape
    row = _axis_row(axes)
    c0, c1 = _axis_span(axes, w)
    if row + 1 >= h or c1 - c0 < 1:
        return []
    top = row + 1
    while top < h and dark[top, c0:c1].mean() > 0.8:
        top += 1
    below = dark[top:min(h, top + max_length + 1), c0:c1]
    if below.size == 0:
        return []
    # Length of the dark run starting at the first row under the axis.
    run = np.where(below.all(axis=0), below.shape[0], np.argmin(below, axis=0))
    hits = np.flatnonzero((run >= 2) & (run < max_length)) + c0
    if hits.size == 0:
        return []
    groups = np.split(hits, np.flatnonzero(np.diff(hits) > 1) + 1)
    centers = [float(gr.mean()) for gr in groups]
    out: list[float] = []
    for c in centers:
        if out and c - out[-1] < TICK_DEDUP_PX:
            continue
        out.append(c)
    return out


def detect_text_boxes(img: RasterImage, axes: AxisPair, strip: int = LABEL_STRIP_PX) -> list[TextBox]:
    """Word boxes of dark glyphs in the first text row below the x axis, left to right."""
    gray = to_grayscale(img).values
    h, w = gray.shape
    row = _axis_row(axes)
    c0, c1 = _axis_span(axes, w)
    pad = int(0.1 * (c1 - c0))
    c0, c1 = max(0, c0 - pad), min(w, c1 + pad)
    r0, r1 = row + 1, min(h, row + 1 + strip)
    if r1 - r0 < 2:
        return []
    dark = gray[r0:r1, c0:c1] < DARK
    labels, n = ndimage.label(dark, structure=np.ones((3, 3), dtype=bool))
    comps = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None or sl[0].start == 0:
            continue  # touches the axis: tick mark or axis thickness
        comps.append([sl[1].start, sl[0].start, sl[1].stop, sl[0].stop])
    if not comps:
        return []
    first_top = min(c[1] for c in comps)
    glyph_h = max(c[3] - c[1] for c in comps if c[1] < first_top + GLYPH_H)
    comps = [c for c in comps if c[1] < first_top + glyph_h]
    comps.sort()
    words: list[list[int]] = []
    for c in comps:
        if words:
            wd = words[-1]
            gap = c[0] - wd[2]
            overlap = min(c[3], wd[3]) - max(c[1], wd[1])
            if gap <= glyph_h and overlap > 0:
                wd[0], wd[1] = min(wd[0], c[0]), min(wd[1], c[1])
                wd[2], wd[3] = max(wd[2], c[2]), max(wd[3], c[3])
                continue
        words.append(list(c))
    return [TextBox(BBox(x0 + c0, y0 + r0, x1 + c0, y1 + r0)) for x0, y0, x1, y1 in words]


# -- recognition --------------------------------------------------------------

_TEMPLATES = {ch: trimmed(ch) for ch in GLYPHS}


def _read_builtin(gray: np.ndarray) -> tuple[str, float]:
    ink = gray < DARK
    rows = np.flatnonzero(ink.any(axis=1))
    if rows.size == 0:
        return "", 0.0
    ink = ink[rows[0]:rows[-1] + 1]
    h = ink.shape[0]
    scale = max(1, int(round(h / GLYPH_H)))
    if h != GLYPH_H * scale:
        return "", 0.0
    cols = ink.any(axis=0)
    idx = np.flatnonzero(cols)
    groups = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    text, scores = [], []
    for gr in groups:
        glyph = ink[:, gr[0]:gr[-1] + 1]
        if scale > 1:
            gh, gw = glyph.shape
            gw -= gw % scale
            if gw == 0:
                return "", 0.0
            glyph = glyph[:, :gw].reshape(GLYPH_H, scale, gw // scale, scale).mean(axis=(1, 3)) > 0.5
        best_ch, best = "", 0.0
        for ch, tpl in _TEMPLATES.items():
            if tpl.shape != glyph.shape:
                continue
            score = float((tpl == glyph).mean())
            if score > best:
                best_ch, best = ch, score
        if best < MIN_GLYPH_SCORE:
            return "", 0.0
        text.append(best_ch)
        scores.append(best)
    return "".join(text), min(scores)


class ExternalRecognizer:
    """Client for an external text recognizer process.

    Protocol: one JSON object per line, UTF-8. Requests are
    ``{"id": int, "png_base64": str}``; responses ``{"id": int, "text": str,
    "confidence": number}`` and may come back in any order. Each outstanding
    box gets ``timeout`` seconds; boxes that time out come back empty.
    A single instance must not be used from several threads at once.
    """

    def __init__(self, command, timeout: float = RECOGNIZER_TIMEOUT):
        self.argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._next_id = 0

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self) -> None:
        if self._proc is not None:
            return
        try:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                          stderr=subprocess.DEVNULL, encoding="utf-8", bufsize=1)
        except (FileNotFoundError, PermissionError, OSError) as exc:
            raise RecognizerUnavailable(f"cannot start recognizer {self.argv!r}: {exc}") from exc
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()

    @staticmethod
    def _pump(stream, out: queue.Queue) -> None:
        for line in stream:
            out.put(line)
        out.put(None)

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=2.0)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def recognize_png(self, crops: list[bytes]) -> list[tuple[str, float | None]]:
        self.start()
        proc = self._proc
        # Ids keep counting across calls so late answers to a timed-out
        # earlier batch are recognised and skipped.
        base = self._next_id
        self._next_id += len(crops)
        requests = [json.dumps({"id": base + i, "png_base64": base64.b64encode(c).decode("ascii")})
                    for i, c in enumerate(crops)]

        def write():
            try:
                for r in requests:
                    proc.stdin.write(r + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError):
                pass

        threading.Thread(target=write, daemon=True).start()
        results: dict[int, tuple[str, float | None]] = {}
        while len(results) < len(crops):
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                break
            if line is None:
                raise RecognizerUnavailable("recognizer exited before answering every box")
            line = line.strip()
            if not line:
                continue
            try:
                msg = json.loads(line)
                rid, text, conf = msg["id"], msg["text"], msg["confidence"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise RecognizerUnavailable(f"malformed recognizer response {line[:80]!r}") from exc
            if not isinstance(rid, int) or isinstance(rid, bool) or not 0 <= rid < base + len(crops) \
                    or not isinstance(text, str) or isinstance(conf, bool) \
                    or not isinstance(conf, (int, float)):
                raise RecognizerUnavailable(f"invalid recognizer response {line[:80]!r}")
            if rid < base:
                continue
            results[rid - base] = (text, float(conf)) if text else ("", None)
        return [results.get(i, ("", None)) for i in range(len(crops))]


def recognize(boxes: list[TextBox], img: RasterImage, recognizer="builtin") -> list[TextBox]:
    """Fill in text and confidence for each box; unreadable boxes get empty text."""
    if not boxes:
        return []
    if recognizer is None or recognizer == "builtin":
        gray = to_grayscale(img).values
        out = []
        for bx in boxes:
            b = bx.bbox
            text, conf = _read_builtin(gray[b.y0:b.y1, b.x0:b.x1])
            out.append(replace(bx, text=text, confidence=conf if text else None))
        return out
    if isinstance(recognizer, str):
        with ExternalRecognizer(recognizer) as rec:
            return recognize(boxes, img, rec)
    crops = [img.crop(b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1).to_png_bytes() for b in boxes]
    answers = recognizer.recognize_png(crops)
    return [replace(bx, text=t, confidence=c if t else None) for bx, (t, c) in zip(boxes, answers)]


# -- values and calibration ---------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")


def parse_numeric(text: str) -> float:
    """Parse a plain decimal / e-notation number; anything else raises ParseFailure."""
    s = text.strip().replace("−", "-")
    if not _NUMBER.fullmatch(s):
        raise ParseFailure(f"not a number: {text!r}")
    return float(s)


def associate_labels(boxes: list[TextBox], ticks: list[float]) -> list[TickLabel]:
    """Pair readable numeric labels with the nearest tick mark.

    A label matches a tick when their centres are within the label width
    (at least 8 px); each tick takes at most one label, the closest one.
    Labels left over are anchored at their own centre.
    """
    parsed = []
    for bx in boxes:
        if not bx.text:
            continue
        try:
            parsed.append((bx, parse_numeric(bx.text)))
        except ParseFailure:
            continue
    claims: dict[int, tuple[float, int]] = {}
    for i, (bx, _) in enumerate(parsed):
        if not ticks:
            break
        d = [abs(t - bx.center_x) for t in ticks]
        j = int(np.argmin(d))
        if d[j] <= max(bx.bbox.width, 8) and (j not in claims or d[j] < claims[j][0]):
            claims[j] = (d[j], i)
    anchor = {i: ticks[j] for j, (_, i) in claims.items()}
    return [TickLabel(anchor.get(i, bx.center_x), v) for i, (bx, v) in enumerate(parsed)]


def _fit(px: np.ndarray, val: np.ndarray) -> tuple[float, float, float]:
    xm, ym = px.mean(), val.mean()
    dx = px - xm
    a = float((dx * (val - ym)).sum() / (dx * dx).sum())
    b = float(ym - a * xm)
    resid = val - (a * px + b)
    return a, b, float(np.sqrt((resid * resid).mean()))


def _monotonic(px: np.ndarray, val: np.ndarray) -> bool:
    d = np.diff(val[np.argsort(px, kind="stable")])
    return bool(np.all(d > 0) or np.all(d < 0))


def calibrate(ticks: list[TickLabel]) -> AxisCalibration:
    """Least-squares ``value = a * px + b`` with single-outlier rejection.

    Tick values must be strictly monotonic along the axis. With four or more
    ticks, one tick is dropped when that cuts the RMS residual at least
    tenfold (or restores monotonicity with such a gain); the dropped index
    is recorded.
    """
    if len({t.anchor_px for t in ticks}) < 2:
        raise InsufficientTicks(f"need two ticks at distinct positions, got {len(ticks)}")
    px = np.array([t.anchor_px for t in ticks], dtype=np.float64)
    val = np.array([t.value for t in ticks], dtype=np.float64)
    mono = _monotonic(px, val)
    a, b, rms = _fit(px, val)
    if len(ticks) >= 4:
        best = None
        for i in range(len(ticks)):
            keep = np.arange(len(ticks)) != i
            if len(set(px[keep])) < 2 or not _monotonic(px[keep], val[keep]):
                continue
            fit = _fit(px[keep], val[keep])
            if best is None or fit[2] < best[1][2]:
                best = (i, fit)
        noise = RESIDUAL_FLOOR * max(1.0, float(np.abs(val).max()))
        if best is not None and rms >= OUTLIER_GAIN * best[1][2] and rms > noise:
            a, b, rms = best[1]
            return AxisCalibration(a, b, rms, (best[0],))
    if not mono or a == 0:
        raise NonMonotonic("tick values are not monotonic along the axis")
    return AxisCalibration(a, b, rms)
