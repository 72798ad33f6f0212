"""End-to-end extraction and the on-disk formats it reads and writes.

One image goes through: axis segments -> coarse box -> refined box ->
tick calibration (optional) -> crop -> probability map -> velocity field
-> start position -> line tracing. Calibration problems only downgrade the
output to pixel x values with a warning.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import cv2
import numpy as np

from .axes import AxisParams, BBox, Refinement, detect_line_segments, propose_plot_region, refine_box
from .errors import DigitizerError, DimensionMismatch
from .evaluation import LineTrace, misalignment, pooled_pr_curve
from .raster import RasterImage, gradient_field, to_grayscale, velocity_field
from .segment import ProbabilityMap, binarize, classical_segment, load_probability_map
from .synthgen import GroundTruth
from .ticks import AxisCalibration, associate_labels, calibrate, detect_text_boxes, detect_tick_marks, recognize
from .trace import TraceBundle, TraceParams, plan_start, trace_lines

AXIS_MARGIN = 3
CALIBRATION_UNAVAILABLE = "calibration-unavailable"
LEFT_EDGE_FLAGGED = "left-edge-unrefined"
BOTTOM_EDGE_FLAGGED = "bottom-edge-unrefined"
OUTLIER_TICK_DROPPED = "calibration-outlier-dropped"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything that controls one extraction run.

    ``probmap`` and ``box`` are external inputs: ``None`` selects the
    classical segmenter and the heuristic plot-region proposal. ``recognizer``
    is ``None`` for the builtin font matcher or a command line for an
    external recognizer process. ``axis_margin`` columns on the left and rows
    at the bottom of the crop are removed from the probability map so the
    axis strokes are not mistaken for data.
    """

    trace: TraceParams = TraceParams()
    axis: AxisParams = AxisParams()
    probmap: Path | None = None
    box: Path | None = None
    recognizer: str | None = None
    lines: int | None = None
    axis_margin: int = AXIS_MARGIN
    jobs: int = 1

    def __post_init__(self):
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.lines is not None and self.lines < 1:
            raise ValueError("lines must be >= 1")


@dataclass
class LineResult:
    id: int
    color: tuple[int, int, int]
    x_px: np.ndarray
    y_px: np.ndarray


@dataclass
class ExtractionResult:
    image: str
    region: BBox
    origin: tuple[int, int]
    calibration: AxisCalibration | None
    lines: list[LineResult]
    warnings: list[str] = field(default_factory=list)

    def x_values(self) -> np.ndarray:
        """x of each point: data units when calibrated, else image columns."""
        cols = np.arange(self.region.x0, self.region.x1, dtype=np.float64)
        return self.calibration.value(cols) if self.calibration is not None else cols

    def point_order(self) -> np.ndarray:
        """Column order that makes x strictly increasing (reversed for decreasing axes)."""
        n = self.region.width
        if self.calibration is not None and self.calibration.a < 0:
            return np.arange(n)[::-1]
        return np.arange(n)


# -- extraction -------------------------------------------------------------

def _calibrate(img: RasterImage, ref: Refinement, recognizer) -> tuple[AxisCalibration | None, list[str]]:
    try:
        marks = detect_tick_marks(to_grayscale(img), ref.axes)
        boxes = recognize(detect_text_boxes(img, ref.axes), img, recognizer)
        cal = calibrate(associate_labels(boxes, marks))
    except DigitizerError:
        return None, [CALIBRATION_UNAVAILABLE]
    return cal, [OUTLIER_TICK_DROPPED] if cal.dropped else []


def suppress_axis_band(pm: ProbabilityMap, margin: int) -> ProbabilityMap:
    """Zero the first ``margin`` columns and last ``margin`` rows (the axis strokes)."""
    if margin <= 0:
        return pm
    v = pm.values.copy()
    v[:, :margin] = 0.0
    v[max(0, v.shape[0] - margin):, :] = 0.0
    return ProbabilityMap(v)


def trace_region(crop: RasterImage, pm: ProbabilityMap, config: PipelineConfig = PipelineConfig()) -> TraceBundle:
    """Tracing stage of the pipeline on an already cropped plot region."""
    pm = suppress_axis_band(pm, config.axis_margin)
    tp = config.trace
    grad = gradient_field(to_grayscale(crop))
    vel = velocity_field(grad, v_max=tp.v_max)
    start = plan_start(binarize(pm, tp.threshold), grad, config.lines)
    return trace_lines(crop, pm, vel, start, tp)


def extract_image(img: RasterImage, image_id: str, config: PipelineConfig = PipelineConfig(), *,
                  probmap: ProbabilityMap | Path | None = None, box: BBox | None = None,
                  recognizer=None) -> tuple[ExtractionResult, TraceBundle]:
    """Run the full pipeline on one decoded image.

    ``probmap`` (a map or a PNG path) must match the refined plot region;
    ``recognizer`` overrides ``config.recognizer`` with a live instance.
    """
    p = config.axis
    lines = detect_line_segments(to_grayscale(img), p)
    coarse = box if box is not None else propose_plot_region(img, p, lines)
    coarse = coarse.clipped(img.width, img.height)
    ref = refine_box(coarse, lines, p)
    region = ref.box.clipped(img.width, img.height)
    warnings = []
    if ref.left_flagged:
        warnings.append(LEFT_EDGE_FLAGGED)
    if ref.bottom_flagged:
        warnings.append(BOTTOM_EDGE_FLAGGED)

    cal, cal_warnings = _calibrate(img, ref, recognizer if recognizer is not None else config.recognizer)
    warnings.extend(cal_warnings)

    crop = img.crop(region.x0, region.y0, region.x1, region.y1)
    if probmap is None:
        pm = classical_segment(crop)
    elif isinstance(probmap, ProbabilityMap):
        if probmap.values.shape != (crop.height, crop.width):
            raise DimensionMismatch(f"map {probmap.values.shape[::-1]} vs region {crop.width}x{crop.height}")
        pm = probmap
    else:
        pm = load_probability_map(probmap, (crop.width, crop.height))
    bundle = trace_region(crop, pm, config)

    cols = np.arange(region.x0, region.x1)
    results = [LineResult(t.line_id, t.color, cols, t.y + region.y0) for t in bundle.traces]
    res = ExtractionResult(image_id, region, region.origin, cal, results, warnings)
    return res, bundle


# -- extraction result formats ---------------------------------------------------

def _num(v: float, digits: int = 6) -> float | int:
    r = round(float(v), digits)
    return 0.0 if r == 0 else r


def result_to_dict(res: ExtractionResult) -> dict:
    order = res.point_order()
    xs = res.x_values()
    cal = None
    if res.calibration is not None:
        c = res.calibration
        cal = {"a": _num(c.a, 12), "b": _num(c.b, 9), "rms": _num(c.rms_residual, 9)}
    lines = []
    for ln in res.lines:
        pts = [[_num(xs[i], 9) if cal else int(xs[i]), _num(ln.y_px[i], 4)] for i in order]
        lines.append({"id": int(ln.id), "color": [int(c) for c in ln.color], "points": pts})
    return {
        "image": res.image,
        "region": res.region.as_dict(),
        "origin": [int(res.origin[0]), int(res.origin[1])],
        "calibration": cal,
        "lines": lines,
        "warnings": list(res.warnings),
    }


def load_schema(name: str) -> dict:
    """JSON schema of an on-disk format: ``"extraction"`` or ``"ground_truth"``."""
    text = resources.files(__package__).joinpath("schemas", f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def result_to_json(res: ExtractionResult) -> str:
    return dumps(result_to_dict(res))


def result_to_csv(res: ExtractionResult) -> str:
    """Wide table: x, then one y-px column per line."""
    d = result_to_dict(res)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x"] + [f"line_{ln['id']}" for ln in d["lines"]])
    xs = res.x_values()
    for i, col in enumerate(res.point_order()):
        x = _num(xs[col], 9) if res.calibration is not None else int(xs[col])
        w.writerow([x] + [ln["points"][i][1] for ln in d["lines"]])
    return buf.getvalue()


def render_overlay(img: RasterImage, res: ExtractionResult, thickness: int = 1) -> RasterImage:
    """Draw each trace over the input image in its line colour."""
    canvas = np.array(img.pixels, copy=True)
    for ln in res.lines:
        pts = np.stack([ln.x_px, ln.y_px], axis=1)
        pts = np.rint(pts * 16).astype(np.int32).reshape(-1, 1, 2)
        color = tuple(int(c) for c in ln.color)
        cv2.polylines(canvas, [pts], False, color, thickness=thickness, lineType=cv2.LINE_AA, shift=4)
    return RasterImage(canvas)


def result_from_dict(d: dict) -> tuple[str, tuple[int, int], list[LineTrace]]:
    """Image id, origin and pixel traces read back from an extraction JSON."""
    cal = d.get("calibration")
    traces = []
    for ln in d["lines"]:
        pts = np.asarray(ln["points"], dtype=np.float64).reshape(-1, 2)
        x = pts[:, 0]
        if cal is not None:
            x = (x - cal["b"]) / cal["a"]
        cols = np.rint(x).astype(int)
        order = np.argsort(cols, kind="stable")
        cols, y = cols[order], pts[order, 1]
        if len(cols) == 0:
            continue
        full = np.arange(cols[0], cols[-1] + 1)
        traces.append(LineTrace(np.interp(full, cols, y), int(cols[0])))
    return d["image"], (int(d["origin"][0]), int(d["origin"][1])), traces


# -- ground truth format ------------------------------------------------------

def ground_truth_to_dict(image_id: str, gt: GroundTruth) -> dict:
    return {
        "image": image_id,
        "region": gt.region.as_dict(),
        "origin": [int(gt.origin[0]), int(gt.origin[1])],
        "ticks": [[int(px), _num(v, 9)] for px, v in gt.ticks],
        "lines": [{"id": k, "y": [_num(v, 4) for v in y]} for k, y in enumerate(gt.lines)],
    }


def ground_truth_from_dict(d: dict) -> tuple[str, BBox, tuple[int, int], list[LineTrace]]:
    r = d["region"]
    region = BBox(r["x0"], r["y0"], r["x1"], r["y1"])
    traces = [LineTrace(np.asarray(ln["y"], dtype=np.float64), region.x0) for ln in d["lines"]]
    return d["image"], region, (int(d["origin"][0]), int(d["origin"][1])), traces


# -- evaluation over directories ------------------------------------------------

def evaluate_dirs(pred_dir: Path, gt_dir: Path, eps_list: Sequence[float]) -> dict:
    """PR table and origin misalignment for ids present in both directories."""
    preds = {}
    for f in sorted(Path(pred_dir).glob("*.json")):
        try:
            d = json.loads(f.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(d, dict) and "calibration" in d:
            iid, origin, traces = result_from_dict(d)
            preds[iid] = (origin, traces)
    gts = {}
    for f in sorted(Path(gt_dir).glob("*.json")):
        try:
            d = json.loads(f.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(d, dict) and "ticks" in d:
            iid, _, origin, traces = ground_truth_from_dict(d)
            gts[iid] = (origin, traces)
    common = sorted(set(preds) & set(gts))
    pairs = [(preds[i][1], gts[i][1]) for i in common]
    curve = pooled_pr_curve(pairs, sorted(eps_list))
    mis = misalignment([preds[i][0] for i in common], [gts[i][0] for i in common])
    return {
        "images": len(common),
        "pr": [{"eps_p": pt.eps_p, "precision": _num(pt.precision, 9), "recall": _num(pt.recall, 9),
                "matched": pt.matched, "n_pred": pt.n_pred, "n_gt": pt.n_gt} for pt in curve],
        "misalignment": {"per_image": {i: d for i, d in zip(common, mis.per_image)}, "mean": mis.mean},
        "missing": {"pred": sorted(set(gts) - set(preds)), "gt": sorted(set(preds) - set(gts))},
    }


def pr_table_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eps_p", "precision", "recall", "matched", "n_pred", "n_gt"])
    for row in report["pr"]:
        w.writerow([row["eps_p"], row["precision"], row["recall"], row["matched"], row["n_pred"], row["n_gt"]])
    return buf.getvalue()
