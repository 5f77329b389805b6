"""``vjcascade`` command line: train, detect, eval, convert, synth.

Exit codes: 0 success, 2 usage error, 3 input error, 4 internal invariant
violation.  Failures print one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time

import numpy as np

from . import _kernels
from .boost import sample_inv_std
from .cascade import CascadeTrainConfig, classify_window, train_cascade
from .cascadexml import dumps_model, load_model, loads_model
from .dataset import (SynthSpec, load_ground_truth, load_manifest,
                      load_positive_images, synth_dataset, write_synth)
from .detect import DetectParams, detect_multiscale
from .errors import CascadeError, InputError, InvariantViolation, MalformedManifest
from .evaluation import (compute_metrics, match_detections, scene_report, to_csv, to_json,
                         to_text, SceneReport)
from .imagecore import GrayImage, Rect, compute_integral, load_image

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 2, 3, 4

log = logging.getLogger("vjcascade")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the target directory and rename into place."""
    path = os.path.abspath(path)
    d = os.path.dirname(path)
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="-" + os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InputError(f"{path}: config file not found") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InputError(f"{path}: invalid JSON config ({exc})") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return cfg


def _section(cfg: dict, name: str, known) -> dict:
    """Section ``name`` of a config file; a flat object is taken as-is."""
    if name in cfg and isinstance(cfg[name], dict):
        return dict(cfg[name])
    return {k: v for k, v in cfg.items() if k in known}


def _set_threads(n) -> int:
    return _kernels.set_threads(n if n is not None else (os.cpu_count() or 1))


def _overrides(args, mapping) -> dict:
    return {key: getattr(args, attr) for attr, key in mapping.items()
            if getattr(args, attr, None) is not None}


def _detect_params(args, cfg) -> DetectParams:
    fields = DetectParams.__dataclass_fields__
    d = _section(cfg, "detect", fields)
    d.update(_overrides(args, {"scale_step": "scale_step", "stride": "window_stride",
                               "min_size": "min_size", "max_size": "max_size",
                               "min_neighbors": "min_neighbors", "eps": "group_eps"}))
    unknown = set(d) - set(fields)
    if unknown:
        raise UsageError(f"unknown detect parameters: {sorted(unknown)}")
    try:
        return DetectParams(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# train

_TRAIN_FLAGS = {"d_min": "d_min", "f_max": "f_max", "f_target": "f_target",
                "max_stages": "max_stages", "max_weak": "max_weak_per_stage", "seed": "seed",
                "holdout": "holdout_fraction", "negatives_per_stage": "negatives_per_stage"}


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    d = _section(cfg, "train", CascadeTrainConfig.__dataclass_fields__)
    d.update(_overrides(args, _TRAIN_FLAGS))
    if args.no_cache:
        d["cache_features"] = False
    try:
        tcfg = CascadeTrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    width = args.width or cfg.get("width", 24)
    height = args.height or cfg.get("height", width)
    threads = _set_threads(args.threads if args.threads is not None else cfg.get("threads"))

    manifest = load_manifest(args.manifest, negatives=args.negatives)
    t0 = time.perf_counter()
    positives = load_positive_images(manifest, width, height)
    negatives = [load_image(p) for p in manifest.negatives]
    log.info("loaded %d positives, %d negative images", len(positives), len(negatives))
    stats = []
    cascade = train_cascade(positives, negatives, tcfg, stats_out=stats)
    elapsed = time.perf_counter() - t0

    report = {
        "seed": tcfg.seed,
        "config": tcfg.to_dict(),
        "window": [width, height],
        "threads": threads,
        "stop_reason": cascade.provenance["stop_reason"],
        "false_positive_estimate": cascade.provenance["false_positive_estimate"],
        "stages": [{"stage": s.stage, "weak": s.weak, "d": s.d, "f": s.f, "negpool": s.negpool,
                    "seconds": round(s.seconds, 3)} for s in stats],
        "seconds": round(elapsed, 3),
    }
    outputs = {
        args.out + ".xml": dumps_model(cascade, "xml"),
        args.out + ".json": dumps_model(cascade, "json"),
        args.out + ".report.json": (json.dumps(report, indent=2, sort_keys=True) + "\n").encode(),
    }
    for path, data in outputs.items():
        atomic_write(path, data)
    print(json.dumps({"stages": len(cascade.stages), "weak": cascade.weak_count,
                      "stop_reason": report["stop_reason"], "outputs": list(outputs)}))
    return EXIT_OK


# --------------------------------------------------------------------------
# detect


def _draw_boxes(img: GrayImage, boxes) -> np.ndarray:
    rgb = np.repeat(img.pixels[:, :, None], 3, axis=2).copy()
    h, w = img.height, img.width
    for b in boxes:
        x0, y0 = max(b.x, 0), max(b.y, 0)
        x1, y1 = min(b.x + b.w - 1, w - 1), min(b.y + b.h - 1, h - 1)
        if x0 > x1 or y0 > y1:
            continue
        for yy in (y0, y1):
            rgb[yy, x0:x1 + 1] = (255, 0, 0)
        for xx in (x0, x1):
            rgb[y0:y1 + 1, xx] = (255, 0, 0)
    return rgb


def _encode_annotated(rgb: np.ndarray, path: str) -> bytes:
    if path.lower().endswith(".png"):
        import io

        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(rgb).save(buf, format="PNG")
        return buf.getvalue()
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def _image_args(args) -> list[str]:
    images = list(args.images)
    if args.list:
        # relative entries resolve against the list's own directory
        root = os.path.dirname(os.path.abspath(args.list))
        images += [os.path.join(root, p) for _, p in _plain_lines(args.list)]
    if not images:
        raise UsageError("no images given")
    return images


def _plain_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return [(no, ln.strip()) for no, ln in enumerate(fh, 1)
                    if ln.strip() and not ln.lstrip().startswith("#")]
    except FileNotFoundError:
        raise InputError(f"{path}: file not found") from None


def cmd_detect(args) -> int:
    cfg = _load_config(args.config)
    params = _detect_params(args, cfg)
    _set_threads(args.threads if args.threads is not None else cfg.get("threads"))
    images = _image_args(args)
    for p in images:
        if not os.path.isfile(p):
            raise InputError(f"{p}: image not found")
    cascade = load_model(args.model)
    results = []
    for p in images:
        img = load_image(p)
        dets = detect_multiscale(cascade, img, params)
        results.append((p, dets))
        if args.annotate:
            ext = ".png" if args.annotate_format == "png" else ".ppm"
            name = os.path.splitext(os.path.basename(p))[0] + ext
            target = os.path.join(args.annotate, name)
            atomic_write(target, _encode_annotated(_draw_boxes(img, [d.box for d in dets]), target))
    if args.format == "json":
        rows = [{"image": p, "x": d.box.x, "y": d.box.y, "w": d.box.w, "h": d.box.h,
                 "score": d.score, "neighbors": d.neighbors} for p, dets in results for d in dets]
        text = json.dumps(rows, indent=2) + "\n"
    else:
        text = "".join(format_detection(p, d) + "\n" for p, dets in results for d in dets)
    if args.out:
        atomic_write(args.out, text.encode("utf-8"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def format_detection(image: str, d) -> str:
    b = d.box
    return f"{image} {b.x} {b.y} {b.w} {b.h} {d.score!r} {d.neighbors}"


def load_detections(path) -> dict:
    """Detections file (text lines or JSON array) -> image -> list of (Rect, score)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise InputError(f"{path}: detections file not found") from None
    out: dict = {}
    if data.lstrip()[:1] == b"[":
        try:
            rows = json.loads(data)
            for r in rows:
                out.setdefault(r["image"], []).append(
                    (Rect(int(r["x"]), int(r["y"]), int(r["w"]), int(r["h"])), float(r["score"])))
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedManifest(f"bad detection JSON ({exc})", path) from None
        return out
    for no, line in enumerate(data.decode("utf-8", "replace").splitlines(), 1):
        tok = line.split()
        if not tok or tok[0].startswith("#"):
            continue
        if len(tok) != 7:
            raise MalformedManifest(f"expected 7 fields, found {len(tok)}", path, no)
        try:
            r = Rect(*(int(v) for v in tok[1:5]))
            score = float(tok[5])
            int(tok[6])
        except ValueError:
            raise MalformedManifest("non-numeric detection field", path, no) from None
        out.setdefault(tok[0], []).append((r, score))
    return out


# --------------------------------------------------------------------------
# eval


def _meta(items) -> dict:
    meta = {}
    for it in items or ():
        if "=" not in it:
            raise UsageError(f"--meta expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        meta[k] = v
    return meta


def _counts_reports(path) -> list[SceneReport]:
    reports = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise InputError(f"{path}: counts file not found") from None
    for no, row in enumerate(rows, 2):
        try:
            tp, fp, fn = int(row["tp"]), int(row["fp"]), int(row["fn"])
            frames = int(row.get("frames") or 1)
            scene = row.get("scene") or ""
        except (KeyError, TypeError, ValueError):
            raise MalformedManifest("row needs integer tp, fp, fn columns", path, no) from None
        if min(tp, fp, fn) < 0:
            raise MalformedManifest("negative count", path, no)
        reports.append(SceneReport(scene, frames, compute_metrics(tp, fp, fn, scene)))
    return reports


def _norm(p: str) -> str:
    return os.path.normcase(os.path.realpath(p))


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    meta = _meta(args.meta)
    if args.counts:
        reports = _counts_reports(args.counts)
    else:
        if not (args.detections and args.truth):
            raise UsageError("eval needs --detections and --truth (or --counts)")
        iou_min = args.iou if args.iou is not None else cfg.get("eval", {}).get("iou_min", 0.5)
        truth = load_ground_truth(args.truth)
        dets = load_detections(args.detections)
        truth_by_key = {_norm(p): (p, boxes) for p, boxes in truth.items()}
        det_dir = os.path.dirname(os.path.abspath(args.detections))
        per_image = {}
        for name, boxes in dets.items():
            key = _norm(name)
            if key not in truth_by_key:
                alt = _norm(os.path.join(det_dir, name))
                key = alt if alt in truth_by_key else key
            per_image.setdefault(key, []).extend(boxes)
        items = []
        for key in sorted(set(truth_by_key) | set(per_image)):
            name, gts = truth_by_key.get(key, (key, []))
            found = sorted(per_image.get(key, []), key=lambda t: (tuple(t[0]), -t[1]))
            items.append((name, match_detections([r for r, _ in found], gts, iou_min)))
        meta.setdefault("iou_min", str(iou_min))
        reports = [scene_report(items, args.scene, meta)]
    rendered = {"text": to_text(reports), "csv": to_csv(reports),
                "json": to_json(reports, per_image=args.per_image)}
    if args.out:
        for fmt, ext in (("text", ".txt"), ("csv", ".csv"), ("json", ".json")):
            atomic_write(args.out + ext, rendered[fmt].encode("utf-8"))
    sys.stdout.write(rendered[args.format])
    return EXIT_OK


# --------------------------------------------------------------------------
# convert


def decision_check(a, b, n: int = 500, seed: int = 0) -> None:
    """Raise InvariantViolation unless ``a`` and ``b`` agree on ``n`` random windows."""
    if (a.base_w, a.base_h) != (b.base_w, b.base_h):
        raise InvariantViolation("converted model changed the window size")
    rng = np.random.default_rng(seed)
    w, h = a.base_w, a.base_h
    window = Rect(0, 0, w, h)
    for k in range(n):
        if k % 2:
            px = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        else:
            yy, xx = np.mgrid[0:h, 0:w]
            base = rng.uniform(0, 255) + rng.uniform(-6, 6) * xx + rng.uniform(-6, 6) * yy
            px = np.clip(base + rng.normal(0, 20, size=(h, w)), 0, 255).astype(np.uint8)
        ii = compute_integral(GrayImage.from_array(px))
        inv = sample_inv_std(ii)
        da, db = classify_window(a, ii, window, inv), classify_window(b, ii, window, inv)
        if (da.accepted, da.rejected_at) != (db.accepted, db.rejected_at):
            raise InvariantViolation(f"conversion changed the decision on check window {k}")


def cmd_convert(args) -> int:
    fmt = args.to or ("json" if args.output.lower().endswith(".json") else "xml")
    with_path = args.input
    try:
        with open(with_path, "rb") as fh:
            data = fh.read()
    except FileNotFoundError:
        raise InputError(f"{with_path}: model file not found") from None
    src = loads_model(data)
    out = dumps_model(src, fmt)
    decision_check(src, loads_model(out), n=args.check_windows)
    atomic_write(args.output, out)
    return EXIT_OK


# --------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    kw = {}
    for attr, key in (("positives", "n_positives"), ("negatives", "n_negative_frames"),
                      ("scenes", "n_scenes")):
        if getattr(args, attr) is not None:
            kw[key] = getattr(args, attr)
    data = synth_dataset(SynthSpec(**kw), seed=args.seed)
    paths = write_synth(data, args.out)
    print(json.dumps({"seed": args.seed, **paths}, sort_keys=True))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vjcascade", description="Boosted Haar cascade detector")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a cascade")
    t.add_argument("--manifest", required=True, help="positives: '<image> <count> x y w h ...'")
    t.add_argument("--negatives", required=True, help="object-free image list")
    t.add_argument("--out", required=True, help="output prefix (writes .xml, .json, .report.json)")
    t.add_argument("--config", help="JSON config; command-line flags win")
    t.add_argument("--width", type=int)
    t.add_argument("--height", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--d-min", dest="d_min", type=float)
    t.add_argument("--f-max", dest="f_max", type=float)
    t.add_argument("--f-target", dest="f_target", type=float)
    t.add_argument("--max-stages", dest="max_stages", type=int)
    t.add_argument("--max-weak", dest="max_weak", type=int)
    t.add_argument("--holdout", type=float, help="fraction of positives kept for calibration")
    t.add_argument("--negatives-per-stage", dest="negatives_per_stage", type=int)
    t.add_argument("--no-cache", action="store_true", help="recompute feature values every round")
    t.add_argument("--threads", type=int)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", help="run a cascade over images")
    d.add_argument("--model", required=True)
    d.add_argument("images", nargs="*")
    d.add_argument("--list", help="file with one image path per line")
    d.add_argument("--format", choices=("text", "json"), default="text")
    d.add_argument("--out", help="write detections here instead of stdout")
    d.add_argument("--annotate", help="directory for images with boxes drawn")
    d.add_argument("--annotate-format", choices=("ppm", "png"), default="ppm")
    d.add_argument("--config")
    d.add_argument("--scale-step", dest="scale_step", type=float)
    d.add_argument("--stride", type=int)
    d.add_argument("--min-size", dest="min_size", type=int)
    d.add_argument("--max-size", dest="max_size", type=int)
    d.add_argument("--min-neighbors", dest="min_neighbors", type=int)
    d.add_argument("--eps", type=float)
    d.add_argument("--threads", type=int)
    d.set_defaults(func=cmd_detect)

    e = sub.add_parser("eval", help="score detections against ground truth")
    e.add_argument("--detections")
    e.add_argument("--truth")
    e.add_argument("--counts", help="CSV with scene,frames,tp,fp,fn rows instead of matching")
    e.add_argument("--iou", type=float)
    e.add_argument("--scene", default="")
    e.add_argument("--meta", action="append", help="key=value scene metadata (repeatable)")
    e.add_argument("--format", choices=("text", "csv", "json"), default="text")
    e.add_argument("--per-image", action="store_true", help="include per-image counts in JSON")
    e.add_argument("--out", help="prefix for .txt/.csv/.json reports")
    e.add_argument("--config")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("convert", help="convert between XML and canonical JSON")
    c.add_argument("input")
    c.add_argument("output")
    c.add_argument("--to", choices=("xml", "json"))
    c.add_argument("--check-windows", type=int, default=500)
    c.set_defaults(func=cmd_convert)

    s = sub.add_parser("synth", help="write the synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--positives", type=int)
    s.add_argument("--negatives", type=int)
    s.add_argument("--scenes", type=int)
    s.set_defaults(func=cmd_synth)
    return p


def _fail(code: int, exc: BaseException) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    path = getattr(exc, "path", None) or getattr(exc, "filename", None)
    if path is not None:
        payload["path"] = os.fspath(path)
    line = getattr(exc, "line", None)
    if line is not None:
        payload["line"] = line
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, exc)
    except InvariantViolation as exc:
        return _fail(EXIT_INTERNAL, exc)
    except (CascadeError, OSError) as exc:
        return _fail(EXIT_INPUT, exc)
    except Exception as exc:  # anything else is a bug
        return _fail(EXIT_INTERNAL, exc)


if __name__ == "__main__":
    sys.exit(main())
