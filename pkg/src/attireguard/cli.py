"""Command-line entry point: ``attireguard <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import config as cfgmod
from .augment import RgbImage, jitter, read_ppm, sample_factors, write_ppm
from .core import ATTIRE_VOCAB, PERSON_VOCAB, BoundingBox, Detection, FrameRef, Vocabulary
from .engine import AlertLog, AnomalyEngine, FrameContext, read_alert_log, read_policies
from .errors import AttireGuardError, MissingFrameData, ParseError
from .evaluation import evaluate
from .losstrain import LossWeights, SgdConfig, make_separable_fixture, train_toy_head, write_loss_curve
from .pipeline import ScriptedBackend, TensorFileBackend, read_annotations, round_half_away, run_frame, split_by_stage

OUT_ENV = "ATTIREGUARD_OUT"
GREEN = (0, 255, 0)
RED = (255, 0, 0)
BORDER = 2


class FrameError(Exception):
    def __init__(self, frame_id, cause):
        super().__init__(f"frame {frame_id}: {cause}")


# -- manifest --------------------------------------------------------------------


def parse_manifest(lines, source="<manifest>") -> Iterator[tuple[FrameRef, FrameContext]]:
    """``frame_id,width,height,zone_id[,illumination[,name=v;name=v]]`` per line."""
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = [p.strip() for p in text.split(",")]
        if not 4 <= len(parts) <= 6:
            raise ParseError(f"expected 4 to 6 fields, got {len(parts)}", source=source, line=lineno)
        try:
            frame = FrameRef(int(parts[0]), int(parts[1]), int(parts[2]), parts[3])
            illum = float(parts[4]) if len(parts) > 4 and parts[4] else 0.5
            conds = {}
            if len(parts) > 5 and parts[5]:
                for item in parts[5].split(";"):
                    name, _, value = item.partition("=")
                    conds[name.strip()] = float(value)
            ctx = FrameContext(parts[3], illum, conds)
        except (ValueError, AttireGuardError) as exc:
            raise ParseError(str(exc), source=source, line=lineno) from None
        yield frame, ctx


# -- annotated frames ------------------------------------------------------------


def draw_box(pixels: np.ndarray, box: BoundingBox, rgb, width: int = BORDER):
    """Burn a ``width``-pixel border just inside ``box`` (clipped to the image)."""
    h, w = pixels.shape[:2]
    x1, y1, x2, y2 = (round_half_away(v) for v in box.corners())
    x1, y1, x2, y2 = max(x1, 0), max(y1, 0), min(x2, w), min(y2, h)
    if x2 <= x1 or y2 <= y1:
        return
    color = np.array(rgb, np.uint8)
    pixels[y1 : min(y1 + width, y2), x1:x2] = color
    pixels[max(y2 - width, y1) : y2, x1:x2] = color
    pixels[y1:y2, x1 : min(x1 + width, x2)] = color
    pixels[y1:y2, max(x2 - width, x1) : x2] = color


def annotate(image: RgbImage, result, anomalies) -> RgbImage:
    bad = {id(a.detection) for a in anomalies}
    pixels = image.pixels.copy()
    for _, det in result.attire:
        draw_box(pixels, det.bbox, RED if id(det) in bad else GREEN)
    return RgbImage(image.width, image.height, pixels)


def _frame_record(result, outcome) -> str:
    rec = {
        "frame_id": result.frame.frame_id,
        "zone_id": result.frame.zone_id,
        "no_person": result.no_person,
        "persons": [[p.bbox.cx, p.bbox.cy, p.bbox.w, p.bbox.h, p.score] for p in result.persons],
        "attire": [
            {"person": k, "class_name": d.label.name, "box": [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h], "score": d.score}
            for k, d in result.attire
        ],
        "anomalies": [
            {"class_name": a.detection.label.name, "original_conf": a.original_conf, "adjusted_conf": a.adjusted_conf}
            for a in outcome.anomalies
        ],
        "threshold": outcome.threshold,
        "persistent": len(outcome.persistent),
        "alerts": len(outcome.alerts),
        "adaptation_rejected": outcome.adaptation_rejected,
    }
    return json.dumps(rec, separators=(",", ":"))


# -- commands --------------------------------------------------------------------


def _backends(cfg):
    if cfg.paths.tensors:
        return TensorFileBackend(cfg.paths.tensors, PERSON_VOCAB), TensorFileBackend(cfg.paths.tensors, ATTIRE_VOCAB)
    if cfg.paths.annotations:
        persons, attire = split_by_stage(read_annotations(cfg.paths.annotations))
        return ScriptedBackend(persons, PERSON_VOCAB), ScriptedBackend(attire, ATTIRE_VOCAB)
    raise AttireGuardError("run needs detector input: --tensors DIR or --annotations FILE")


def cmd_run(cfg: cfgmod.EngineConfig, manifest: str) -> int:
    out = Path(cfg.paths.out)
    try:
        person_backend, attire_backend = _backends(cfg)
        policies = read_policies(cfg.paths.policy) if cfg.paths.policy else cfg.zone_policies()
    except (AttireGuardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    engine = AnomalyEngine(
        policies,
        cfg.fuzzy,
        cfg.threshold,
        cfg.temporal,
        adaptation_rate=cfg.adaptation.rate,
        ema_smoothing=cfg.adaptation.ema_smoothing,
    )
    frames_dir = Path(cfg.paths.frames) if cfg.paths.frames and cfg.stream.annotate else None
    out.mkdir(parents=True, exist_ok=True)
    if frames_dir is not None:
        (out / "frames").mkdir(exist_ok=True)

    frame_id = None
    try:
        with open(manifest) as mf, AlertLog(out / "alerts.jsonl", cfg.stream.start, cfg.stream.fps) as log, open(
            out / "frames.jsonl", "w"
        ) as records:
            for frame, ctx in parse_manifest(mf, source=manifest):
                frame_id = frame.frame_id
                try:
                    result = run_frame(frame, person_backend, attire_backend, cfg.decode)
                    outcome = engine.process(result, ctx)
                    if frames_dir is not None:
                        src = frames_dir / f"{frame_id}.ppm"
                        if not src.is_file():
                            raise MissingFrameData(f"frame image {src} not found")
                        write_ppm(out / "frames" / f"{frame_id}.ppm", annotate(read_ppm(src), result, outcome.anomalies))
                except (AttireGuardError, OSError) as exc:
                    raise FrameError(frame_id, exc) from exc
                log.write(outcome.alerts)
                records.write(_frame_record(result, outcome) + "\n")
                records.flush()
    except (FrameError, AttireGuardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _detections_by_frame(path, vocab: Optional[Vocabulary] = None):
    recs = read_annotations(path)
    vocab = vocab or Vocabulary(sorted({r.class_name for r in recs}))
    out: dict = {}
    for r in recs:
        out.setdefault(r.frame_id, []).append(Detection(r.bbox, vocab.label(r.class_name), r.score))
    return out


def cmd_eval(cfg, predictions: str, ground_truth: str, alerts=None, anomaly_frames=None, label="Detector") -> int:
    try:
        names = sorted({r.class_name for p in (predictions, ground_truth) for r in read_annotations(p)})
        vocab = Vocabulary(names) if names else None
        preds = _detections_by_frame(predictions, vocab)
        gts = _detections_by_frame(ground_truth, vocab)
        alert_recs = gt_frames = None
        if alerts is not None:
            alert_recs = read_alert_log(alerts)
            gt_frames = set()
            if anomaly_frames is not None:
                gt_frames = {int(t) for t in Path(anomaly_frames).read_text().split()}
    except (AttireGuardError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    report = evaluate(preds, gts, cfg.eval.iou_thresh, alert_recs, gt_frames)
    table = report.table(label)
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval_report.txt").write_text(table)
    (out / "eval_report.jsonl").write_text(report.json_lines())
    sys.stdout.write(table)
    return 0


def cmd_train_toy(cfg) -> int:
    t = cfg.train
    fixture = make_separable_fixture(cfg.seed, t.grid, t.anchors, t.classes, t.objects)
    try:
        _, curve = train_toy_head(
            fixture,
            SgdConfig(t.learning_rate, t.momentum, t.weight_decay),
            t.epochs,
            cfg.seed,
            LossWeights(t.lambda_coord, t.lambda_obj, t.lambda_class),
        )
    except AttireGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    write_loss_curve(out / "loss_curve.txt", curve)
    print(f"initial loss {curve[0]:.6g}, final loss {curve[-1]:.6g}, ratio {curve[-1] / curve[0]:.6g}")
    return 0


def cmd_augment(cfg, input_dir: str, count: int) -> int:
    if count < 0:
        print("error: --count must be >= 0", file=sys.stderr)
        return 2
    if count == 0:
        return 0
    rng = np.random.default_rng(cfg.seed)
    out = Path(cfg.paths.out)
    try:
        sources = sorted(Path(input_dir).glob("*.ppm"))
        images = [(p.stem, read_ppm(p)) for p in sources]
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "factors.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["file", "hue", "saturation", "brightness"])
            for stem, img in images:
                for i in range(count):
                    f = sample_factors(rng)
                    name = f"{stem}_aug{i}.ppm"
                    write_ppm(out / name, jitter(img, f))
                    writer.writerow([name, repr(f.hue), repr(f.saturation), repr(f.brightness)])
    except (AttireGuardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


# -- argument handling -------------------------------------------------------------


def _common(default):
    common = argparse.ArgumentParser(add_help=False, argument_default=default)
    common.add_argument("--config", metavar="PATH", help="JSON config file (see emit-defaults)")
    common.add_argument("--seed", type=int, metavar="N", help="seed for every random draw")
    common.add_argument("--tensors", metavar="DIR", help="directory of <frame_id>.ygt / <frame_id>_<person>.ygt tensors")
    common.add_argument("--frames", metavar="DIR", help="directory of <frame_id>.ppm images to annotate")
    common.add_argument("--annotations", metavar="FILE", help="scripted detections: frame_id,class_name,cx,cy,w,h,score")
    common.add_argument("--out", metavar="DIR", help=f"output directory (env {OUT_ENV} also sets it)")
    common.add_argument("--policy", metavar="FILE", help="zone policies, one 'zone_id: class,class' per line")
    return common


def build_parser() -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting
    # values given before the subcommand
    common = _common(argparse.SUPPRESS)
    parser = argparse.ArgumentParser(
        prog="attireguard",
        description="Attire anomaly detection over file-backed frame streams.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="config defaults:\n" + cfgmod.defaults_help(),
        parents=[_common(None)],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="process a frame manifest and emit alerts")
    p.add_argument("manifest", help="frame_id,width,height,zone_id[,illumination[,name=v;...]] per line")

    p = sub.add_parser("eval", parents=[common], help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--alerts", metavar="FILE", help="alert log to score for false alarms")
    p.add_argument("--anomaly-frames", metavar="FILE", help="whitespace-separated ids of frames with a real anomaly")
    p.add_argument("--label", default="Detector", help="row label in the report table")

    sub.add_parser("train-toy", parents=[common], help="train the toy detection head and write its loss curve")

    p = sub.add_parser("augment", parents=[common], help="write colour-jittered copies of PPM images")
    p.add_argument("input_dir")
    p.add_argument("--count", type=int, default=1, help="variants per image (default 1)")

    sub.add_parser("emit-defaults", parents=[common], help="print the default config as JSON")
    return parser


def resolve_config(args) -> cfgmod.EngineConfig:
    cfg = cfgmod.parse_config(args.config) if args.config else cfgmod.EngineConfig()
    paths = cfg.paths
    for name in ("tensors", "frames", "annotations", "policy"):
        if getattr(args, name):
            paths = replace(paths, **{name: getattr(args, name)})
    out = args.out or os.environ.get(OUT_ENV) or paths.out
    cfg = replace(cfg, paths=replace(paths, out=out))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "emit-defaults":
        sys.stdout.write(cfgmod.emit_defaults())
        return 0
    try:
        cfg = resolve_config(args)
    except (AttireGuardError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        return cmd_run(cfg, args.manifest)
    if args.command == "eval":
        return cmd_eval(cfg, args.predictions, args.ground_truth, args.alerts, args.anomaly_frames, args.label)
    if args.command == "train-toy":
        return cmd_train_toy(cfg)
    return cmd_augment(cfg, args.input_dir, args.count)


if __name__ == "__main__":
    sys.exit(main())
