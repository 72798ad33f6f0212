"""Command-line entry point: ``extract``, ``evaluate`` and ``synthesize``.

Exit codes: 0 when every image succeeded, 2 when some images failed (the
others still produce output), 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import synthgen
from .axes import AxisParams, BBox
from .errors import DigitizerError, RecognizerUnavailable
from .pipeline import (PipelineConfig, dumps, evaluate_dirs, extract_image, ground_truth_to_dict,
                       pr_table_csv, render_overlay, result_to_csv, result_to_json)
from .raster import RasterImage
from .ticks import ExternalRecognizer
from .trace import TraceParams

log = logging.getLogger("specdigitizer")

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2
DEFAULT_EPS = (1.0, 2.0, 3.0, 4.0, 5.0)


# -- extract ------------------------------------------------------------------

def _per_image_path(path: Path | None, image: Path, single: bool) -> Path | None:
    """A file applies to a single input; a directory holds ``<stem>.<ext>`` per input."""
    if path is None:
        return None
    if path.is_dir():
        for ext in (".png", ".json"):
            cand = path / (image.stem + ext)
            if cand.exists():
                return cand
        return None
    if not single:
        raise ValueError(f"{path} is a single file but several inputs were given; pass a directory")
    return path


def _load_box(path: Path | None) -> BBox | None:
    if path is None:
        return None
    d = json.loads(path.read_text(encoding="utf-8"))
    d = d.get("region", d)
    return BBox(int(d["x0"]), int(d["y0"]), int(d["x1"]), int(d["y1"]))


_worker_recognizer = None


def _init_worker(command: str | None) -> None:
    global _worker_recognizer
    _worker_recognizer = ExternalRecognizer(command) if command else None


def _run_one(image: Path, config: PipelineConfig, out: Path, fmt: str, overlay: bool,
             single: bool) -> tuple[str, str | None, str | None]:
    """Extract one image and write its outputs; returns (id, error kind, message)."""
    iid = image.stem
    try:
        img = RasterImage.load(image)
        box = _load_box(_per_image_path(config.box, image, single))
        probmap = _per_image_path(config.probmap, image, single)
        if config.probmap is not None and probmap is None:
            raise FileNotFoundError(f"no probability map for {image.name} in {config.probmap}")
        res, _ = extract_image(img, iid, config, probmap=probmap, box=box, recognizer=_worker_recognizer)
    except (DigitizerError, OSError, ValueError, KeyError) as exc:
        return iid, type(exc).__name__, str(exc)
    if fmt in ("json", "both"):
        (out / f"{iid}.json").write_text(result_to_json(res), encoding="utf-8")
    if fmt in ("csv", "both"):
        (out / f"{iid}.csv").write_text(result_to_csv(res), encoding="utf-8")
    if overlay:
        render_overlay(img, res).save(out / f"{iid}_overlay.png")
    for w in res.warnings:
        log.warning("%s: %s", iid, w)
    return iid, None, None


def run_extract(args) -> int:
    inputs = [Path(p) for p in args.input]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = TraceParams(delta_s=args.delta_s, delta_c=args.delta_c, delta=args.neighborhood,
                        v_max=args.vmax, stretch_factor=args.stretch)
    config = PipelineConfig(trace=trace, axis=AxisParams(eps1=args.eps1, eps2=args.eps2),
                            probmap=Path(args.probmap) if args.probmap else None,
                            box=Path(args.box) if args.box else None,
                            recognizer=args.recognizer, lines=args.lines, jobs=args.jobs)
    if config.recognizer:
        # A command that cannot even start would fail every image; stop here
        # instead. Protocol errors on a single image only cost its calibration.
        probe = ExternalRecognizer(config.recognizer)
        probe.start()
        probe.close()
    single = len(inputs) == 1
    jobs = min(config.jobs, max(1, len(inputs)))
    if jobs == 1:
        _init_worker(config.recognizer)
        try:
            outcomes = [_run_one(p, config, out, args.format, args.overlay, single) for p in inputs]
        finally:
            if _worker_recognizer is not None:
                _worker_recognizer.close()
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(config.recognizer,)) as pool:
            futures = [pool.submit(_run_one, p, config, out, args.format, args.overlay, single)
                       for p in inputs]
            outcomes = [f.result() for f in futures]

    failures = [{"image": iid, "error": kind, "message": msg} for iid, kind, msg in outcomes if kind]
    if failures:
        (out / "failures.json").write_text(dumps(failures), encoding="utf-8")
        for f in failures:
            log.error("%s: %s: %s", f["image"], f["error"], f["message"])
    if not inputs:
        return EXIT_OK
    if len(failures) == len(inputs):
        return EXIT_FATAL
    return EXIT_PARTIAL if failures else EXIT_OK


# -- evaluate -------------------------------------------------------------------

def run_evaluate(args) -> int:
    report = evaluate_dirs(Path(args.pred), Path(args.gt), args.eps)
    text = dumps(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text, encoding="utf-8")
        (out / "pr.csv").write_text(pr_table_csv(report), encoding="utf-8")
    else:
        sys.stdout.write(text)
    for iid in report["missing"]["pred"]:
        log.warning("no prediction for %s", iid)
    for iid in report["missing"]["gt"]:
        log.warning("no ground truth for %s", iid)
    return EXIT_OK


# -- synthesize -----------------------------------------------------------------

def run_synthesize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.count <= 0:
        return EXIT_OK
    if args.sharp:
        scenes = synthgen.sharp_peak_suite(args.seed, args.count)
    else:
        scenes = (synthgen.generate_scene(s) for s in synthgen.standard_suite(args.count, args.seed))
    width = max(4, len(str(args.count - 1)))
    for i, (img, gt) in enumerate(scenes):
        iid = f"scene_{i:0{width}d}"
        img.save(out / f"{iid}.png")
        (out / f"{iid}.json").write_text(dumps(ground_truth_to_dict(iid, gt)), encoding="utf-8")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specdigitizer", description="Extract line data from spectra plot images.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="digitize plot images")
    ex.add_argument("--input", nargs="+", required=True, metavar="PATH", help="input image(s)")
    ex.add_argument("--out", required=True, metavar="DIR")
    ex.add_argument("--probmap", metavar="PATH", help="probability-map PNG (or directory of <stem>.png)")
    ex.add_argument("--box", metavar="PATH", help="coarse plot box JSON (or directory of <stem>.json)")
    ex.add_argument("--delta-s", type=float, default=3.0, help="semantic validation distance, px")
    ex.add_argument("--delta-c", type=float, default=30.0, help="colour validation distance, RGB L2")
    ex.add_argument("--neighborhood", type=int, default=10, help="colour search half-height, px")
    ex.add_argument("--vmax", type=float, default=10.0, help="velocity clamp, px per column")
    ex.add_argument("--stretch", type=int, default=1, help="x-stretch factor for steep peaks")
    ex.add_argument("--eps1", type=float, default=0.98, help="axis alignment cosine threshold")
    ex.add_argument("--eps2", type=float, default=0.5, help="axis alignment length-ratio threshold")
    ex.add_argument("--lines", type=int, help="number of lines (default: estimated)")
    ex.add_argument("--recognizer", metavar="CMD", help="external text recognizer command")
    ex.add_argument("--overlay", action="store_true", help="also write <stem>_overlay.png")
    ex.add_argument("--jobs", type=int, default=1, help="images processed in parallel")
    ex.add_argument("--format", choices=("json", "csv", "both"), default="json")
    ex.set_defaults(func=run_extract)

    ev = sub.add_parser("evaluate", help="score predictions against ground truth")
    ev.add_argument("--pred", required=True, metavar="DIR")
    ev.add_argument("--gt", required=True, metavar="DIR")
    ev.add_argument("--eps", type=float, nargs="+", default=list(DEFAULT_EPS), help="match thresholds, px")
    ev.add_argument("--out", metavar="DIR", help="write report.json and pr.csv here (default: stdout)")
    ev.set_defaults(func=run_evaluate)

    sy = sub.add_parser("synthesize", help="generate synthetic plots with ground truth")
    sy.add_argument("--out", required=True, metavar="DIR")
    sy.add_argument("--count", type=int, default=100)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--sharp", action="store_true", help="sharp-peak suite instead of the standard one")
    sy.set_defaults(func=run_synthesize)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except RecognizerUnavailable as exc:
        log.error("recognizer unavailable: %s", exc)
        return EXIT_FATAL
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
