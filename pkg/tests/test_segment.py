from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import bce_oracle
from specdigitizer import synthgen
from specdigitizer.errors import DecodeFailure, DimensionMismatch
from specdigitizer.raster import RasterImage
from specdigitizer.segment import (ProbabilityMap, SemanticMap, background_color, bce_score, binarize,
                                   classical_segment, despeckle, load_probability_map)
from specdigitizer.synthgen import LineSpec, PeakSpec, SceneSpec

_maps = arrays(np.float64, st.tuples(st.integers(1, 10), st.integers(1, 10)), elements=st.floats(0, 1))


def _three_line_crop():
    lines = (
        LineSpec((PeakSpec(120.0, 0.12, 20.0),), 0.15, (31, 119, 180), 2),
        LineSpec((PeakSpec(300.0, 0.10, 35.0, "lorentzian"),), 0.45, (214, 39, 40), 3),
        LineSpec((PeakSpec(220.0, 0.08, 15.0),), 0.75, (44, 160, 44), 1),
    )
    spec = SceneSpec(lines=lines)
    img, gt = synthgen.generate_scene(spec)
    _, alphas = synthgen.render_layers(spec)
    b = gt.region
    crop = img.crop(b.x0, b.y0, b.x1, b.y1)
    cover = [a[b.y0:b.y1, b.x0:b.x1] for a in alphas]
    return crop, cover


# -- classical segmenter ---------------------------------------------------------------

def test_blank_crop_is_background():
    pm = classical_segment(RasterImage(np.full((30, 40, 3), 255, dtype=np.uint8)))
    assert pm.values.max() < 0.05


def test_clean_crop_mask_matches_strokes():
    crop, cover = _three_line_crop()
    fg = binarize(classical_segment(crop)).mask
    stroke = np.zeros_like(fg)
    touched = np.zeros_like(fg)
    for a in cover:
        stroke |= a > 0.5
        touched |= a > 0
    background = ~touched
    background[:, 0] = False        # y axis
    background[-1, :] = False       # x axis
    assert fg[stroke].mean() >= 0.95
    assert fg[background].mean() <= 0.02


def test_gridlines_lighter_than_curves_score_lower():
    c = np.full((40, 60, 3), 255, dtype=np.uint8)
    c[10, :] = (200, 200, 200)
    c[25, :] = (31, 119, 180)
    pm = classical_segment(RasterImage(c)).values
    assert pm[10].max() < pm[25].min()


def test_background_is_channel_mode():
    c = np.full((10, 10, 3), (250, 240, 230), dtype=np.uint8)
    c[:4] = (0, 0, 0)
    assert background_color(c).tolist() == [250.0, 240.0, 230.0]


def test_small_specks_removed():
    c = np.full((30, 30, 3), 255, dtype=np.uint8)
    c[5, 5] = 0
    c[10:12, 10:12] = 0
    c[20, 2:20] = 0
    pm = classical_segment(RasterImage(c)).values
    assert pm[5, 5] == 0 and pm[10, 10] == 0 and pm[20, 10] > 0.5


def test_classical_segment_is_deterministic():
    crop, _ = _three_line_crop()
    assert np.array_equal(classical_segment(crop).values, classical_segment(crop).values)


def test_despeckle_uses_eight_connectivity():
    m = np.zeros((6, 6), dtype=bool)
    m[1, 1] = m[2, 2] = m[3, 3] = True      # diagonal chain of 3
    assert despeckle(m, 3)[1, 1]
    assert not despeckle(m, 4).any()


# -- exchange format ----------------------------------------------------------------------

def test_all_255_png_loads_as_ones(tmp_path):
    ProbabilityMap(np.ones((5, 7))).save(tmp_path / "p.png")
    pm = load_probability_map(tmp_path / "p.png", (7, 5))
    assert np.array_equal(pm.values, np.ones((5, 7)))


def test_round_trip_within_quantization(tmp_path):
    v = np.random.default_rng(0).random((9, 11))
    ProbabilityMap(v).save(tmp_path / "p.png")
    back = load_probability_map(tmp_path / "p.png", (11, 9)).values
    assert np.abs(back - v).max() <= 1 / 255


def test_wrong_size_is_dimension_mismatch(tmp_path):
    ProbabilityMap(np.zeros((5, 7))).save(tmp_path / "p.png")
    with pytest.raises(DimensionMismatch):
        load_probability_map(tmp_path / "p.png", (5, 7))


def test_corrupt_map_is_decode_failure(tmp_path):
    (tmp_path / "p.png").write_bytes(b"garbage")
    with pytest.raises(DecodeFailure):
        load_probability_map(tmp_path / "p.png")


def test_probability_map_range_enforced():
    with pytest.raises(ValueError):
        ProbabilityMap(np.array([[1.5]]))
    with pytest.raises(ValueError):
        ProbabilityMap(np.array([[-0.1]]))


@settings(max_examples=40, deadline=None)
@given(_maps, st.floats(0.05, 0.95))
def test_binarize_survives_png_round_trip(tmp_path_factory, values, threshold):
    values = np.where(np.abs(values - threshold) <= 1 / 255, 0.0, values)
    m = ProbabilityMap(values)
    path = tmp_path_factory.mktemp("pm") / "m.png"
    m.save(path)
    assert np.array_equal(binarize(load_probability_map(path), threshold).mask, binarize(m, threshold).mask)


# -- binarize ----------------------------------------------------------------------------

def test_binarize_examples():
    assert not binarize(ProbabilityMap(np.zeros((3, 4)))).mask.any()
    assert binarize(ProbabilityMap(np.ones((3, 4)))).mask.all()
    checker = np.where((np.indices((4, 4)).sum(axis=0) % 2) == 0, 0.4, 0.6)
    assert np.array_equal(binarize(ProbabilityMap(checker), 0.5).mask, checker == 0.6)


def test_binarize_is_inclusive_and_validates_threshold():
    assert binarize(ProbabilityMap(np.array([[0.5]])), 0.5).mask.all()
    for t in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            binarize(ProbabilityMap(np.zeros((1, 1))), t)


# -- cross-entropy ----------------------------------------------------------------------------

def test_bce_perfect_prediction():
    gt = np.random.default_rng(1).random((6, 6)) < 0.5
    assert bce_score(ProbabilityMap(gt.astype(float)), SemanticMap(gt)) <= 1e-6


def test_bce_half_everywhere_is_ln2():
    gt = np.random.default_rng(2).random((6, 6)) < 0.5
    assert bce_score(ProbabilityMap(np.full((6, 6), 0.5)), SemanticMap(gt)) == pytest.approx(math.log(2))


def test_bce_matches_summation_oracle():
    rng = np.random.default_rng(3)
    pred, gt = rng.random((12, 9)), rng.random((12, 9)) < 0.3
    assert bce_score(ProbabilityMap(pred), SemanticMap(gt)) == pytest.approx(
        bce_oracle(pred.tolist(), gt.tolist()), rel=1e-12)


def test_bce_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        bce_score(ProbabilityMap(np.zeros((2, 3))), SemanticMap(np.zeros((3, 2), dtype=bool)))


@settings(max_examples=80, deadline=None)
@given(_maps, st.data())
def test_bce_nonnegative_and_zero_only_on_match(values, data):
    gt = data.draw(arrays(np.bool_, values.shape))
    score = bce_score(ProbabilityMap(values), SemanticMap(gt))
    assert score >= 0
    clamped_match = np.all(np.where(gt, values >= 1 - 1e-7, values <= 1e-7))
    if clamped_match:
        assert score <= 2e-7
    else:
        assert score > 0
