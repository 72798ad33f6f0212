from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from specdigitizer import synthgen
from specdigitizer.cli import EXIT_FATAL, EXIT_OK, EXIT_PARTIAL, main
from specdigitizer.pipeline import dumps, ground_truth_to_dict
from specdigitizer.segment import ProbabilityMap
from specdigitizer.synthgen import LineSpec, PeakSpec, SceneSpec

MOCK = Path(__file__).with_name("mock_recognizer.py")
EXTRACTION_KEYS = ["image", "region", "origin", "calibration", "lines", "warnings"]


def _files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def scenes(tmp_path_factory):
    d = tmp_path_factory.mktemp("scenes")
    assert main(["synthesize", "--out", str(d), "--count", "4", "--seed", "42"]) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def extracted(scenes, tmp_path_factory):
    out = tmp_path_factory.mktemp("pred")
    images = sorted(str(p) for p in scenes.glob("*.png"))
    assert main(["extract", "--input", *images, "--out", str(out), "--format", "both", "--overlay"]) == EXIT_OK
    return out


def _labelled_scene(**kwargs) -> SceneSpec:
    lines = (LineSpec((PeakSpec(200.0, 0.2, 25.0),), 0.3, (31, 119, 180), 2),
             LineSpec((), 0.65, (214, 39, 40), 2))
    return SceneSpec(lines=lines, ticks=((100, 50.0), (300, 250.0), (500, 450.0)), **kwargs)


# -- synthesize ------------------------------------------------------------------------------

def test_synthesize_writes_images_and_ground_truth(scenes, ground_truth_schema):
    names = sorted(p.name for p in scenes.iterdir())
    assert names == sorted([f"scene_{i:04d}.{ext}" for i in range(4) for ext in ("png", "json")])
    for f in scenes.glob("*.json"):
        jsonschema.validate(json.loads(f.read_text(encoding="utf-8")), ground_truth_schema)


def test_synthesize_is_byte_identical(scenes, tmp_path):
    assert main(["synthesize", "--out", str(tmp_path), "--count", "4", "--seed", "42"]) == EXIT_OK
    assert _files(tmp_path) == _files(scenes)


def test_synthesize_empty_suite_writes_nothing(tmp_path):
    assert main(["synthesize", "--out", str(tmp_path), "--count", "0"]) == EXIT_OK
    assert list(tmp_path.iterdir()) == []


def test_synthesize_sharp_suite_keeps_slope_guarantee(tmp_path):
    assert main(["synthesize", "--out", str(tmp_path), "--count", "2", "--seed", "1", "--sharp"]) == EXIT_OK
    for f in tmp_path.glob("*.json"):
        lines = json.loads(f.read_text(encoding="utf-8"))["lines"]
        assert max(np.abs(np.diff(ln["y"])).max() for ln in lines) >= 15.0


# -- extract ----------------------------------------------------------------------------------

def test_extract_json_follows_schema_and_key_order(extracted, extraction_schema):
    for f in extracted.glob("*.json"):
        text = f.read_text(encoding="utf-8")
        d = json.loads(text)
        assert list(d) == EXTRACTION_KEYS
        assert text == json.dumps(d, indent=2, ensure_ascii=False) + "\n"
        jsonschema.validate(d, extraction_schema)
        for ln in d["lines"]:
            assert len(ln["points"]) == d["region"]["x1"] - d["region"]["x0"]
            xs = [p[0] for p in ln["points"]]
            assert xs == sorted(xs) and len(set(xs)) == len(xs)


def test_extract_writes_wide_csv_and_overlay(extracted):
    for f in extracted.glob("*.json"):
        d = json.loads(f.read_text(encoding="utf-8"))
        with open(f.with_suffix(".csv"), encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x"] + [f"line_{ln['id']}" for ln in d["lines"]]
        assert len(rows) - 1 == d["region"]["x1"] - d["region"]["x0"]
        assert all(len(r) == 1 + len(d["lines"]) for r in rows)
        assert (f.parent / f"{f.stem}_overlay.png").exists()


def test_extracted_lines_match_ground_truth(scenes, extracted, tmp_path):
    assert main(["evaluate", "--pred", str(extracted), "--gt", str(scenes), "--eps", "2",
                 "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
    (pt,) = report["pr"]
    assert report["images"] == 4
    assert pt["precision"] == pt["recall"] == 1.0
    with open(tmp_path / "pr.csv", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps_p", "precision", "recall", "matched", "n_pred", "n_gt"] and len(rows) == 2


def test_evaluate_reports_missing_counterparts(scenes, extracted, tmp_path, capsys):
    pred = tmp_path / "pred"
    pred.mkdir()
    first = sorted(extracted.glob("scene_*.json"))[0]
    (pred / first.name).write_bytes(first.read_bytes())
    orphan = json.loads(first.read_text(encoding="utf-8"))
    orphan["image"] = "orphan"
    (pred / "orphan.json").write_text(dumps(orphan), encoding="utf-8")
    assert main(["evaluate", "--pred", str(pred), "--gt", str(scenes)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["images"] == 1
    assert report["missing"]["gt"] == ["orphan"]
    assert len(report["missing"]["pred"]) == 3


def test_parallel_batch_equals_serial(scenes, extracted, tmp_path):
    images = sorted(str(p) for p in scenes.glob("*.png"))
    assert main(["extract", "--input", *images, "--out", str(tmp_path), "--jobs", "2"]) == EXIT_OK
    for f in tmp_path.glob("*.json"):
        assert f.read_bytes() == (extracted / f.name).read_bytes()


def test_batch_with_corrupt_file_is_partial(scenes, tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not an image")
    images = sorted(str(p) for p in scenes.glob("*.png"))[:2] + [str(bad)]
    out = tmp_path / "out"
    assert main(["extract", "--input", *images, "--out", str(out)]) == EXIT_PARTIAL
    assert len(list(out.glob("scene_*.json"))) == 2
    failures = json.loads((out / "failures.json").read_text(encoding="utf-8"))
    assert [f["image"] for f in failures] == ["broken"] and failures[0]["error"] == "DecodeFailure"


def test_batch_with_only_failures_is_fatal(tmp_path):
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not an image")
    assert main(["extract", "--input", str(bad), "--out", str(tmp_path / "out")]) == EXIT_FATAL


def test_unreadable_ticks_downgrade_to_pixel_x(tmp_path):
    img, _ = synthgen.generate_scene(_labelled_scene(draw_labels=False))
    img.save(tmp_path / "nolabels.png")
    assert main(["extract", "--input", str(tmp_path / "nolabels.png"), "--out", str(tmp_path)]) == EXIT_OK
    d = json.loads((tmp_path / "nolabels.json").read_text(encoding="utf-8"))
    assert d["calibration"] is None
    assert "calibration-unavailable" in d["warnings"]
    assert all(isinstance(p[0], int) for p in d["lines"][0]["points"])


def test_labelled_scene_is_calibrated(tmp_path):
    img, gt = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "labelled.png")
    assert main(["extract", "--input", str(tmp_path / "labelled.png"), "--out", str(tmp_path)]) == EXIT_OK
    cal = json.loads((tmp_path / "labelled.json").read_text(encoding="utf-8"))["calibration"]
    assert cal is not None
    for px, value in gt.ticks:
        assert cal["a"] * px + cal["b"] == pytest.approx(value, abs=1.0)


def test_external_recognizer_command(tmp_path):
    img, gt = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "labelled.png")
    cmd = f"{sys.executable} {MOCK} echo 1 50 250 450"
    assert main(["extract", "--input", str(tmp_path / "labelled.png"), "--out", str(tmp_path),
                 "--recognizer", cmd]) == EXIT_OK
    cal = json.loads((tmp_path / "labelled.json").read_text(encoding="utf-8"))["calibration"]
    assert cal is not None
    assert cal["a"] * 300 + cal["b"] == pytest.approx(250.0, abs=1.0)


def test_missing_recognizer_is_fatal(tmp_path):
    img, _ = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "labelled.png")
    assert main(["extract", "--input", str(tmp_path / "labelled.png"), "--out", str(tmp_path),
                 "--recognizer", "/nonexistent/recognizer"]) == EXIT_FATAL


def test_external_probability_map(tmp_path):
    img, gt = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "scene.png")
    b = gt.region
    values = np.zeros((b.height, b.width))
    for m in synthgen.line_masks(gt, b, pad=0.5):
        values[m] = 1.0
    ProbabilityMap(values).save(tmp_path / "map.png")
    (tmp_path / "box.json").write_text(json.dumps(b.as_dict()), encoding="utf-8")
    out = tmp_path / "out"
    assert main(["extract", "--input", str(tmp_path / "scene.png"), "--out", str(out),
                 "--probmap", str(tmp_path / "map.png"), "--box", str(tmp_path / "box.json")]) == EXIT_OK
    d = json.loads((out / "scene.json").read_text(encoding="utf-8"))
    assert len(d["lines"]) == 2


def test_mismatched_probability_map_is_a_per_image_failure(tmp_path):
    img, _ = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "scene.png")
    ProbabilityMap(np.zeros((5, 5))).save(tmp_path / "map.png")
    out = tmp_path / "out"
    assert main(["extract", "--input", str(tmp_path / "scene.png"), "--out", str(out),
                 "--probmap", str(tmp_path / "map.png")]) == EXIT_FATAL
    failures = json.loads((out / "failures.json").read_text(encoding="utf-8"))
    assert failures[0]["error"] == "DimensionMismatch"


def test_ground_truth_dict_round_trips_through_schema(ground_truth_schema):
    spec = synthgen.standard_suite(1, seed=3)[0]
    _, gt = synthgen.generate_scene(spec)
    jsonschema.validate(json.loads(dumps(ground_truth_to_dict("x", gt))), ground_truth_schema)


def test_recognizer_dying_mid_protocol_costs_only_calibration(tmp_path):
    img, _ = synthgen.generate_scene(_labelled_scene())
    img.save(tmp_path / "labelled.png")
    assert main(["extract", "--input", str(tmp_path / "labelled.png"), "--out", str(tmp_path),
                 "--recognizer", f"{sys.executable} {MOCK} exit"]) == EXIT_OK
    d = json.loads((tmp_path / "labelled.json").read_text(encoding="utf-8"))
    assert d["calibration"] is None and "calibration-unavailable" in d["warnings"]
