"""Shared scene suites and scoring helpers for the slower tests."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from specdigitizer import synthgen
from specdigitizer.evaluation import match_distances
from specdigitizer.pipeline import PipelineConfig, trace_region
from specdigitizer.raster import RasterImage
from specdigitizer.segment import ProbabilityMap, classical_segment
from specdigitizer.synthgen import GroundTruth
from specdigitizer.trace import TraceParams

SUITE_SEED = 2024
SUITE_SIZE = 100


@dataclass
class PreparedScene:
    image: RasterImage
    gt: GroundTruth
    crop: RasterImage
    probmap: ProbabilityMap
    gt_rows: list[np.ndarray]          # ground truth in crop row coordinates
    hole_line: int | None = None
    hole: tuple[int, int] | None = None


def _prepare(img: RasterImage, gt: GroundTruth, seed: int, degrade: bool) -> PreparedScene:
    b = gt.region
    crop = img.crop(b.x0, b.y0, b.x1, b.y1)
    values = classical_segment(crop).values
    k = hole = None
    if degrade:
        values, k, hole = synthgen.degrade_probmap(values, gt, b, seed=seed)
    rows = [np.asarray(y) - b.y0 for y in gt.lines]
    return PreparedScene(img, gt, crop, ProbabilityMap(values), rows, k, hole)


@lru_cache(maxsize=None)
def standard_scenes(seed: int = SUITE_SEED, size: int = SUITE_SIZE):
    specs = synthgen.standard_suite(size, seed=seed)
    return tuple((sp, *synthgen.generate_scene(sp)) for sp in specs)


@lru_cache(maxsize=None)
def prepared_suite(degrade: bool, seed: int = SUITE_SEED, size: int = SUITE_SIZE) -> tuple[PreparedScene, ...]:
    return tuple(_prepare(img, gt, sp.seed, degrade) for sp, img, gt in standard_scenes(seed, size))


@lru_cache(maxsize=None)
def sharp_suite(seed: int = 1, size: int = 20) -> tuple[PreparedScene, ...]:
    return tuple(_prepare(img, gt, 0, False) for img, gt in synthgen.sharp_peak_suite(seed, size))


def trace_distances(scene: PreparedScene, params: TraceParams) -> np.ndarray:
    """Mean |y - gt| between every traced line (rows) and every true line (columns)."""
    config = PipelineConfig(trace=params, lines=len(scene.gt_rows))
    bundle = trace_region(scene.crop, scene.probmap, config)
    return np.array([[np.mean(np.abs(t.y - g)) for g in scene.gt_rows] for t in bundle.traces])


def line_errors(d: np.ndarray) -> np.ndarray:
    """Per true line error after pairing traces to lines with minimum total distance."""
    r, c = linear_sum_assignment(d)
    out = np.full(d.shape[1], np.inf)
    out[c] = d[r, c]
    return out


def suite_distances(scenes, params: TraceParams) -> list[np.ndarray]:
    return [trace_distances(s, params) for s in scenes]


def suite_recall(mats: list[np.ndarray], eps_p: float) -> float:
    """Pooled recall: matched lines over all true lines, with the library's matching."""
    matched = sum(match_distances(d, eps_p).count for d in mats)
    return matched / sum(d.shape[1] for d in mats)
