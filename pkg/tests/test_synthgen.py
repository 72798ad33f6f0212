from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specdigitizer import synthgen
from specdigitizer.errors import InvalidScene
from specdigitizer.synthgen import LineSpec, PeakSpec, SceneSpec


def _three_lines(noise=0.0) -> SceneSpec:
    lines = (
        LineSpec((PeakSpec(120.0, 0.12, 20.0),), 0.15, (31, 119, 180), 2),
        LineSpec((PeakSpec(300.0, 0.10, 35.0, "lorentzian"),), 0.45, (214, 39, 40), 3),
        LineSpec((PeakSpec(220.0, 0.08, 15.0),), 0.75, (44, 160, 44), 1),
    )
    return SceneSpec(lines=lines, ticks=((100, 50.0), (300, 250.0), (500, 450.0)), noise_sigma=noise, seed=7)


def test_flat_line_has_constant_trace():
    spec = SceneSpec(lines=(LineSpec((), 0.5, (0, 0, 0), 2),))
    _, gt = synthgen.generate_scene(spec)
    y = gt.lines[0]
    assert len(y) == gt.region.width
    assert np.all(y == y[0])


def test_rendered_pixels_belong_to_their_own_line():
    spec = _three_lines()
    _, alphas = synthgen.render_layers(spec)
    traces = synthgen.line_traces(spec)
    x0 = spec.origin[0]
    own = total = 0
    for k, alpha in enumerate(alphas):
        rows, cols = np.nonzero(alpha[:, x0:spec.plot_right] > 0.5)
        d = np.stack([np.abs(rows - t[cols]) for t in traces])
        own += int((d.argmin(axis=0) == k).sum())
        total += len(rows)
    assert own / total >= 0.99


def test_same_spec_gives_identical_bytes():
    spec = _three_lines(noise=4.0)
    a, gta = synthgen.generate_scene(spec)
    b, gtb = synthgen.generate_scene(spec)
    assert a.to_png_bytes() == b.to_png_bytes()
    assert all(np.array_equal(p, q) for p, q in zip(gta.lines, gtb.lines))


def test_noise_seed_changes_pixels():
    a, _ = synthgen.generate_scene(_three_lines(noise=4.0))
    b, _ = synthgen.generate_scene(replace(_three_lines(noise=4.0), seed=8))
    assert a.to_png_bytes() != b.to_png_bytes()


def test_ground_truth_traces_lie_inside_region():
    for spec in synthgen.standard_suite(10, seed=11):
        _, gt = synthgen.generate_scene(spec)
        for y in gt.lines:
            assert len(y) == gt.region.width
            assert gt.region.y0 <= y.min() and y.max() < gt.region.y1


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_every_trace_column_has_a_nearby_stroke_pixel(seed):
    spec = synthgen.random_scene(seed, noise_sigma=0.0, blur_sigma=0.0)
    _, alphas = synthgen.render_layers(spec)
    rows = np.arange(spec.height)[:, None]
    for line, alpha, y in zip(spec.lines, alphas, synthgen.line_traces(spec)):
        cols = spec.columns
        near = np.abs(rows - y[None, :]) <= line.stroke_width / 2 + 1
        assert np.all((near & (alpha[:, cols] > 0)).any(axis=0))


def test_curve_leaving_canvas_is_rejected():
    spec = SceneSpec(lines=(LineSpec((PeakSpec(200.0, 2.0, 30.0),), 0.5),))
    with pytest.raises(InvalidScene):
        synthgen.generate_scene(spec)


def test_near_identical_colors_rejected_unless_hard_overlap():
    lines = (LineSpec((), 0.3, (10, 10, 10)), LineSpec((), 0.6, (20, 20, 20)))
    with pytest.raises(InvalidScene):
        synthgen.validate_scene(SceneSpec(lines=lines))
    synthgen.validate_scene(SceneSpec(lines=lines, hard_overlap=True))


def test_line_count_limits():
    with pytest.raises(InvalidScene):
        synthgen.validate_scene(SceneSpec(lines=()))
    many = tuple(LineSpec((), 0.05 + 0.08 * k, synthgen.PALETTE[k]) for k in range(11))
    with pytest.raises(InvalidScene):
        synthgen.validate_scene(SceneSpec(lines=many))


def test_peak_spec_invariants():
    with pytest.raises(InvalidScene):
        PeakSpec(1.0, 0.0, 1.0)
    with pytest.raises(InvalidScene):
        PeakSpec(1.0, 1.0, -1.0)
    with pytest.raises(InvalidScene):
        PeakSpec(1.0, 1.0, 1.0, "voigt")


def test_standard_suite_is_deterministic_and_within_ranges():
    a = synthgen.standard_suite(8, seed=3)
    b = synthgen.standard_suite(8, seed=3)
    assert a == b
    for spec in a:
        assert 2 <= len(spec.lines) <= 6
        assert spec.noise_sigma == 4.0 and spec.blur_sigma == 0.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 2))
def test_random_scenes_are_always_valid(seed):
    spec = synthgen.random_scene(seed)
    synthgen.validate_scene(spec)
    cols = [np.array(ln.color, dtype=float) for ln in spec.lines]
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            assert np.linalg.norm(cols[i] - cols[j]) >= synthgen.MIN_COLOR_DISTANCE


def _max_slope(gt) -> float:
    return max(float(np.abs(np.diff(y)).max()) for y in gt.lines)


def test_sharp_suite_slope_guarantee():
    suite = synthgen.sharp_peak_suite(1, 20)
    assert len(suite) == 20
    assert all(_max_slope(gt) >= 15.0 for _, gt in suite)


def test_sharp_suite_is_deterministic_and_seed_dependent():
    a = synthgen.sharp_peak_suite(1, 3)
    b = synthgen.sharp_peak_suite(1, 3)
    c = synthgen.sharp_peak_suite(2, 3)
    assert [img.to_png_bytes() for img, _ in a] == [img.to_png_bytes() for img, _ in b]
    assert [img.to_png_bytes() for img, _ in a] != [img.to_png_bytes() for img, _ in c]
    assert all(_max_slope(gt) >= 15.0 for _, gt in c)


def test_stretch_halves_slope():
    _, gt = synthgen.sharp_peak_suite(1, 1)[0]
    for y in gt.lines:
        s1 = np.abs(np.diff(y)).max()
        s2 = np.abs(np.diff(synthgen.stretch_trace(y, 2))).max()
        assert s2 == pytest.approx(s1 / 2, rel=1e-12)


def test_degrade_probmap_cuts_hole_and_adds_salt():
    spec = _three_lines()
    _, gt = synthgen.generate_scene(spec)
    box = gt.region
    clean = np.zeros((box.height, box.width))
    for m in synthgen.line_masks(gt, box, pad=0.0):
        clean[m] = 1.0
    out, k, (a, b) = synthgen.degrade_probmap(clean, gt, box, seed=5)
    assert b - a == 20
    own = synthgen.line_masks(gt, box, pad=0.0)[k]
    assert out[:, a:b][own[:, a:b]].mean() < 0.05
    assert out[:, :a][own[:, :a]].all()
    added = (out == 1.0) & (clean == 0.0)
    assert 0.002 < added.mean() < 0.008
    again, _, _ = synthgen.degrade_probmap(clean, gt, box, seed=5)
    assert np.array_equal(out, again)
