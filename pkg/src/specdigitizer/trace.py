"""Column-sweep line tracing with optical-flow prediction.

Each line is followed column by column from a start column, first to the
right edge and then back to the left edge. At every step the position is
predicted from the flow velocity field, validated or snapped against the
foreground pixels of the next column, and finally checked against the
line's running reference colour.
"""

from __future__ import annotations

import math
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyMask, NoValidColumn
from .raster import GradientField, RasterImage, VelocityField, stretch_columns, velocity_from_image
from .segment import ProbabilityMap, SemanticMap, binarize, despeckle

FLOW = 0
SEMANTIC_SNAP = 1
COLOR_SNAP = 2
PROVENANCE_NAMES = {FLOW: "flow", SEMANTIC_SNAP: "semantic-snap", COLOR_SNAP: "color-snap"}


@dataclass(frozen=True)
class TraceParams:
    """Tracer settings.

    ``delta_s`` (px) and ``delta_c`` (RGB L2) are the validation thresholds
    of the semantic and colour corrections, ``delta`` the half-height of the
    colour search window. ``flow_window`` is the half-height of the vertical
    neighbourhood over which the velocity field is pooled at a point.
    Semantic candidates farther than ``snap_radius`` px from the prediction
    are ignored (``None`` considers the whole column), and foreground
    components smaller than ``min_component`` pixels never count as
    candidates.
    """

    delta_s: float = 3.0
    delta_c: float = 30.0
    delta: int = 10
    v_max: float = 10.0
    stretch_factor: int = 1
    ref_color_window: int = 15
    flow_window: int = 3
    snap_radius: float | None = 10.0
    min_component: int = 5
    threshold: float = 0.5
    use_semantic: bool = True
    use_color: bool = True

    def __post_init__(self):
        if self.delta_s <= 0 or self.delta_c <= 0 or self.v_max <= 0:
            raise ValueError("delta_s, delta_c and v_max must be positive")
        if self.delta < 1 or self.stretch_factor < 1 or self.ref_color_window < 1:
            raise ValueError("delta, stretch_factor and ref_color_window must be >= 1")
        if self.flow_window < 0:
            raise ValueError("flow_window must be >= 0")
        if self.min_component < 1:
            raise ValueError("min_component must be >= 1")


@dataclass(frozen=True)
class StartPosition:
    column: int
    ys: tuple[float, ...]

    @property
    def line_count(self) -> int:
        return len(self.ys)


@dataclass(eq=False)
class Trace:
    """One traced line: ``y[i]`` is the row at column ``x_start + i``."""

    line_id: int
    y: np.ndarray
    x_start: int = 0
    ref_colors: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    provenance: np.ndarray | None = None

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.x_start, self.x_start + len(self.y))

    @property
    def color(self) -> tuple[int, int, int]:
        if len(self.ref_colors) == 0:
            return (0, 0, 0)
        med = np.median(self.ref_colors, axis=0)
        return tuple(int(round(c)) for c in med)

    def shifted(self, dx: int, dy: float) -> "Trace":
        return Trace(self.line_id, self.y + dy, self.x_start + dx, self.ref_colors, self.provenance)

    def provenance_names(self) -> list[str]:
        if self.provenance is None:
            return []
        return [PROVENANCE_NAMES[int(c)] for c in self.provenance]


@dataclass(eq=False)
class TraceBundle:
    traces: list[Trace]
    width: int
    start: StartPosition | None = None

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(self.traces)


@dataclass(frozen=True)
class TraceLosses:
    intensity: float
    smooth: float
    semantic: float

    @property
    def total(self) -> float:
        return self.intensity + self.smooth + self.semantic


# -- column structure ---------------------------------------------------------

def column_runs(mask: np.ndarray) -> list[np.ndarray]:
    """Maximal vertical foreground runs per column as (n, 2) arrays of [start, end] rows."""
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    pad = np.zeros((h + 2, w), dtype=np.int8)
    pad[1:-1] = m
    d = np.diff(pad, axis=0)
    starts_r, starts_c = np.nonzero(d == 1)
    ends_r, ends_c = np.nonzero(d == -1)
    so = np.lexsort((starts_r, starts_c))
    eo = np.lexsort((ends_r, ends_c))
    starts_r, starts_c = starts_r[so], starts_c[so]
    ends_r = ends_r[eo]
    bounds = np.searchsorted(starts_c, np.arange(w + 1))
    runs = []
    for x in range(w):
        a, b = bounds[x], bounds[x + 1]
        runs.append(np.stack([starts_r[a:b], ends_r[a:b] - 1], axis=1))
    return runs


def run_counts(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask, dtype=bool)
    starts = m.copy()
    starts[1:] &= ~m[:-1]
    return starts.sum(axis=0)


def estimate_line_count(mask: SemanticMap) -> int:
    """Most common number of vertical runs over non-empty columns (ties go to the larger)."""
    counts = run_counts(mask.mask)
    counts = counts[counts >= 1]
    if counts.size == 0:
        raise EmptyMask("semantic map has no foreground")
    tally = Counter(counts.tolist())
    return max(tally, key=lambda c: (tally[c], c))


def select_start(mask: SemanticMap, grad: GradientField, m: int) -> StartPosition:
    """Column with exactly ``m`` runs whose run centres see the least ``|gx|``.

    Ties go to the leftmost column; the start rows are the run centres.
    """
    runs = column_runs(mask.mask)
    gx = np.abs(grad.gx)
    best = None
    for x, r in enumerate(runs):
        if len(r) != m:
            continue
        centers = (r[:, 0] + r[:, 1]) / 2.0
        cost = float(gx[np.floor(centers).astype(int), x].sum())
        if best is None or cost < best[0]:
            best = (cost, x, centers)
    if best is None:
        raise NoValidColumn(f"no column shows exactly {m} foreground runs")
    return StartPosition(best[1], tuple(float(c) for c in best[2]))


def plan_start(mask: SemanticMap, grad: GradientField, m: int | None = None,
               min_component: int = 5) -> StartPosition:
    """Line count (unless given) and start position read from a despeckled mask.

    Isolated false-foreground specks would otherwise add spurious runs and
    can pose as a line inside a gap of a real one.
    """
    clean = SemanticMap(despeckle(mask.mask, min_component), mask.threshold)
    if not clean.mask.any():
        clean = mask
    if m is None:
        m = estimate_line_count(clean)
    return select_start(clean, grad, m)


# -- per-column corrections ---------------------------------------------------

def _semantic(y_hat: float, cand: np.ndarray, delta_s: float) -> tuple[float, int]:
    """Returns (new y, index of nearest candidate or -1)."""
    n = len(cand)
    if n == 0:
        return y_hat, -1
    i = int(np.searchsorted(cand, y_hat))
    if i == 0:
        j = 0
    elif i == n:
        j = n - 1
    else:
        j = i - 1 if (y_hat - cand[i - 1]) <= (cand[i] - y_hat) else i
    if abs(cand[j] - y_hat) < delta_s:
        return y_hat, j
    return float(cand[j]), j


def semantic_step(y_hat: float, y_cand, delta_s: float) -> float:
    """Keep ``y_hat`` if a candidate row lies closer than ``delta_s``, else snap to the nearest.

    With no candidates the prediction is kept. Equidistant candidates resolve
    to the smaller row.
    """
    cand = np.sort(np.asarray(y_cand, dtype=np.float64))
    return _semantic(float(y_hat), cand, delta_s)[0]


def _window(y_hat: float, delta: int, height: int) -> tuple[int, int]:
    lo = max(0, math.ceil(y_hat - delta))
    hi = min(height - 1, math.floor(y_hat + delta))
    return lo, hi


def _color(column: np.ndarray, y_hat: float, ref: np.ndarray, delta: int,
           delta_c: float) -> tuple[float, bool]:
    lo, hi = _window(y_hat, delta, column.shape[0])
    if hi < lo:
        return y_hat, False
    diff = column[lo:hi + 1] - ref
    dist = np.sqrt((diff * diff).sum(axis=1))
    if dist.min() < delta_c:
        return y_hat, False
    rows = np.arange(lo, hi + 1)
    best = np.lexsort((rows, np.abs(rows - y_hat), dist))[0]
    return float(rows[best]), True


def color_step(x: int, y_hat: float, ref, img: RasterImage, delta: int = 10,
               delta_c: float = 30.0) -> float:
    """Colour check over rows within ``delta`` of ``y_hat`` in column ``x``.

    If any row there is within ``delta_c`` (RGB L2) of ``ref`` the prediction
    stands; otherwise the closest-coloured row is returned (ties: nearest to
    ``y_hat``, then smaller row). The window is clipped to the image.
    """
    column = img.pixels[:, x].astype(np.float64)
    return _color(column, float(y_hat), np.asarray(ref, dtype=np.float64), delta, delta_c)[0]


class _VelocitySampler:
    """Pools ``v`` over ``rows y-w .. y+w`` of a column, weighted by ``gy**2``.

    This is the least-squares velocity of the brightness-constancy equation
    over the window; it stays defined at the centre of a stroke where
    ``gy`` vanishes.
    """

    def __init__(self, vel: VelocityField, window: int):
        w = np.asarray(vel.weight, dtype=np.float64)
        h = w.shape[0]
        self.cw = np.vstack([np.zeros((1, w.shape[1])), np.cumsum(w, axis=0)])
        self.cwv = np.vstack([np.zeros((1, w.shape[1])), np.cumsum(w * vel.v, axis=0)])
        self.window = window
        self.h = h
        self.v_max = vel.v_max

    def __call__(self, x: int, y: float) -> float:
        r = int(round(y))
        lo = max(0, r - self.window)
        hi = min(self.h, r + self.window + 1)
        sw = self.cw[hi, x] - self.cw[lo, x]
        if sw <= 0.0:
            return 0.0
        v = (self.cwv[hi, x] - self.cwv[lo, x]) / sw
        return max(-self.v_max, min(self.v_max, v))


def sample_velocity(vel: VelocityField, x: int, y: float, window: int = 3) -> float:
    return _VelocitySampler(vel, window)(x, y)


# -- the sweep ------------------------------------------------------------------

class _LineState:
    __slots__ = ("y", "ref", "ref_arr")

    def __init__(self, y: float, seed_color: np.ndarray, window: int):
        self.y = y
        self.ref = deque([seed_color], maxlen=window)
        self.ref_arr = seed_color

    def accept(self, color: np.ndarray) -> None:
        self.ref.append(color)
        self.ref_arr = np.median(np.asarray(self.ref), axis=0)


def _core_row(prob: np.ndarray, runs: np.ndarray, x: int, row: int) -> int | None:
    """Most confident row of the foreground run containing ``row``, if any."""
    if len(runs) == 0:
        return None
    i = int(np.searchsorted(runs[:, 0], row, side="right")) - 1
    if i < 0 or row > runs[i, 1]:
        return None
    a, b = int(runs[i, 0]), int(runs[i, 1])
    return a + int(np.argmax(prob[a:b + 1, x]))


def _sweep(xs, states, pixels, prob, cands, runs, sampler, p: TraceParams, sign: int,
           out_y, out_prov):
    h = pixels.shape[0]
    radius = p.snap_radius
    for x_prev, x in zip(xs[:-1], xs[1:]):
        cand = cands[x]
        col_runs = runs[x]
        preds = []
        for st in states:
            y_hat = st.y + sign * sampler(x_prev, st.y)
            preds.append(min(max(y_hat, 0.0), h - 1.0))

        new_y = list(preds)
        prov = [FLOW] * len(states)
        if p.use_semantic and len(cand):
            snaps = {}
            for k, yh in enumerate(preds):
                local = cand
                if radius is not None:
                    a = int(np.searchsorted(cand, yh - radius, side="left"))
                    b = int(np.searchsorted(cand, yh + radius, side="right"))
                    local = cand[a:b]
                if len(local) == 0:
                    continue
                y_sem, j = _semantic(yh, local, p.delta_s)
                d = abs(local[j] - yh)
                run = int(np.searchsorted(col_runs[:, 0], local[j], side="right")) - 1
                snaps[k] = (y_sem, d, run)
            owner: dict[int, int] = {}
            for k, (_, d, run) in snaps.items():
                if run not in owner or d < snaps[owner[run]][1]:
                    owner[run] = k
            for k, (y_sem, d, run) in snaps.items():
                if d >= p.delta_s and owner[run] == k:
                    new_y[k] = y_sem
                    prov[k] = SEMANTIC_SNAP

        column = pixels[:, x]
        for k, st in enumerate(states):
            y = new_y[k]
            if p.use_color:
                y, snapped = _color(column, y, st.ref_arr, p.delta, p.delta_c)
                if snapped:
                    prov[k] = COLOR_SNAP
            st.y = y
            core = _core_row(prob, col_runs, x, int(round(y)))
            if core is not None:
                st.accept(column[core])
            out_y[k, x] = y
            out_prov[k, x] = prov[k]


def _trace_native(img: RasterImage, probmap_values: np.ndarray, sem: SemanticMap,
                  vel: VelocityField, start: StartPosition, p: TraceParams) -> TraceBundle:
    pixels = img.pixels.astype(np.float64)
    h, w = sem.mask.shape
    if not 0 <= start.column < w:
        raise NoValidColumn(f"start column {start.column} outside [0, {w})")
    mask = despeckle(sem.mask, p.min_component)
    prob = np.where(mask, probmap_values, 0.0)
    runs = column_runs(mask)
    cands = [np.flatnonzero(mask[:, x]).astype(np.float64) for x in range(w)]
    sampler = _VelocitySampler(vel, p.flow_window)
    m = start.line_count
    out_y = np.zeros((m, w))
    out_prov = np.zeros((m, w), dtype=np.int8)
    xt = start.column
    seeds = []
    for y in start.ys:
        core = _core_row(prob, runs[xt], xt, int(round(y)))
        seeds.append(pixels[int(round(y)) if core is None else core, xt])
    states = [_LineState(float(y), seeds[k], p.ref_color_window) for k, y in enumerate(start.ys)]
    for k, st in enumerate(states):
        out_y[k, xt] = st.y
    snapshot = [(st.y, deque(st.ref, maxlen=st.ref.maxlen), st.ref_arr) for st in states]

    _sweep(list(range(xt, w)), states, pixels, prob, cands, runs, sampler, p, +1, out_y, out_prov)
    forward_refs = [np.asarray(st.ref) for st in states]
    for st, (y, ref, arr) in zip(states, snapshot):
        st.y, st.ref, st.ref_arr = y, ref, arr
    _sweep(list(range(xt, -1, -1)), states, pixels, prob, cands, runs, sampler, p, -1, out_y, out_prov)

    traces = []
    for k in range(m):
        refs = np.vstack([forward_refs[k], np.asarray(states[k].ref)])
        traces.append(Trace(k, out_y[k], 0, refs, out_prov[k]))
    return TraceBundle(traces, w, start)


def trace_lines(img: RasterImage, probmap: ProbabilityMap, vel: VelocityField,
                start: StartPosition, p: TraceParams = TraceParams()) -> TraceBundle:
    """Trace every line of ``start`` across all columns of the crop.

    With ``stretch_factor > 1`` the crop and probability map are stretched
    along x, the velocity field is rebuilt on the stretched image with the
    same settings, and the traces are sampled back at the original columns.
    """
    if probmap.values.shape != (img.height, img.width) or vel.shape != (img.height, img.width):
        raise ValueError("image, probability map and velocity field must share dimensions")
    f = p.stretch_factor
    if f == 1:
        return _trace_native(img, probmap.values, binarize(probmap, p.threshold), vel, start, p)

    pix = np.clip(np.rint(stretch_columns(img.pixels, f)), 0, 255).astype(np.uint8)
    img_s = RasterImage(pix)
    prob_s = ProbabilityMap(np.clip(stretch_columns(probmap.values, f), 0.0, 1.0))
    vel_s = velocity_from_image(img_s, v_max=vel.v_max, eps_g=vel.eps_g, smooth_sigma=vel.smooth_sigma)
    start_s = StartPosition(start.column * f, start.ys)
    bundle = _trace_native(img_s, prob_s.values, binarize(prob_s, p.threshold), vel_s, start_s, p)
    traces = [Trace(t.line_id, t.y[::f].copy(), 0, t.ref_colors, t.provenance[::f].copy())
              for t in bundle.traces]
    return TraceBundle(traces, img.width, start)


# -- diagnostics ----------------------------------------------------------------

def trace_losses(bundle: TraceBundle, img: RasterImage, probmap: ProbabilityMap,
                 vel: VelocityField, flow_window: int = 3) -> TraceLosses:
    """Intensity, smoothness and semantic penalties of a bundle, summed over lines.

    Samples are taken at the nearest pixel row; the smoothness term uses the
    same pooled velocity as the tracer.
    """
    pixels = img.pixels.astype(np.float64)
    h, w = probmap.values.shape
    if bundle.width != w:
        raise ValueError("bundle width does not match the image")
    sampler = _VelocitySampler(vel, flow_window)
    intensity = smooth = semantic = 0.0
    cols = np.arange(w)
    for t in bundle.traces:
        y = np.asarray(t.y, dtype=np.float64)
        rows = np.clip(np.rint(y).astype(int), 0, h - 1)
        samples = pixels[rows, cols]
        intensity += float(((samples[1:] - samples[:-1]) ** 2).sum())
        v = np.array([sampler(x, y[x]) for x in range(w - 1)])
        smooth += float(((y[1:] - y[:-1] - v) ** 2).sum())
        semantic += float(((1.0 - probmap.values[rows, cols]) ** 2).sum())
    return TraceLosses(intensity, smooth, semantic)
