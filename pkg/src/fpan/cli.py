"""Command-line front end: dataset generation, training, evaluation,
baselines, tracking, and curve export.

Every command resolves its configuration as CLI flag > config file >
default, echoes the resolved form for reproducibility, writes its
artifacts, and exits 0 only if all of them landed.  `FPAN_SEED` supplies
the seed when neither a flag nor a config file does.

Heavy imports happen inside the command handlers so `--threads` can pin
the BLAS thread pools before numpy first loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path


def _default_seed() -> int:
    env = os.environ.get("FPAN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError as exc:
        raise SystemExit(f"error: FPAN_SEED must be an integer, got {env!r}") \
            from exc


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    if "numpy" in sys.modules:
        print("warning: --threads ignored, numpy already loaded",
              file=sys.stderr)
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        loaded = json.load(fh)
    if not isinstance(loaded, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return loaded


def _echo(tag: str, payload: dict) -> None:
    print(f"{tag}: {json.dumps(payload, sort_keys=True)}")


# -- gen-data ----------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    from .synth import (DatasetSpec, GlyphBank, generate_dataset,
                        generate_sequence_dataset)

    file_cfg = _read_json(args.spec) if args.spec else {}
    kind = file_cfg.pop("kind", "scenes")
    length = file_cfg.pop("length", 30)
    velocity = tuple(file_cfg.pop("velocity", (2.0, 0.0)))
    jitter = file_cfg.pop("jitter", 0.0)
    overrides = {
        "n_images": args.n_images, "image_size": args.image_size,
        "min_digits": args.min_digits, "noise_density": args.noise,
        "background": args.background, "max_overlap": args.max_overlap,
        "seed": args.seed,
    }
    for key, val in overrides.items():
        if val is not None:
            file_cfg[key] = val
    file_cfg.setdefault("seed", _default_seed())
    if args.sequence:
        kind = "sequence"
    spec = DatasetSpec.from_dict(file_cfg)

    if args.glyphs:
        images = args.glyphs
        labels = args.glyph_labels or images.replace("images", "labels")
        bank = GlyphBank.from_idx(images, labels)
    else:
        bank = GlyphBank.builtin()

    out = Path(args.out)
    if kind == "sequence":
        samples = generate_sequence_dataset(spec, bank, out, length=length,
                                            velocity=velocity, jitter=jitter)
        _echo("gen-data", {"kind": kind, "out": str(out), "frames": len(samples),
                           "velocity": list(velocity), **spec.to_dict()})
    elif kind == "scenes":
        samples = generate_dataset(spec, bank, out)
        _echo("gen-data", {"kind": kind, "out": str(out),
                           "images": len(samples), **spec.to_dict()})
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    return 0


# -- train ---------------------------------------------------------------------


def _load_model_and_train_cfg(args, seed: int):
    from .network import NetworkConfig, build_network
    from .train import TrainConfig

    file_cfg = _read_json(args.config) if args.config else {}
    net_cfg = dict(file_cfg.get("network", {}))
    train_cfg = dict(file_cfg.get("train", {}))
    if args.variant is not None:
        net_cfg["variant"] = args.variant
    for key, val in (("steps", args.steps), ("batch_size", args.batch_size),
                     ("lr", args.lr), ("optimizer", args.optimizer),
                     ("stop_loss", args.stop_loss), ("seed", args.seed)):
        if val is not None:
            train_cfg[key] = val
    train_cfg.setdefault("seed", seed)
    cfg = NetworkConfig.from_dict(net_cfg)
    tcfg = TrainConfig.from_dict(train_cfg)
    model = build_network(cfg, seed=tcfg.seed)
    return model, tcfg


def _cmd_train(args) -> int:
    from .synth import expand_targets, load_dataset
    from .train import train_model

    seed = args.seed if args.seed is not None else _default_seed()
    model, tcfg = _load_model_and_train_cfg(args, seed)
    samples = load_dataset(args.data)
    if not args.no_expand_targets:
        samples = expand_targets(samples)
    metrics = args.metrics or str(Path(args.out).with_suffix(".metrics.csv"))
    _echo("train", {"data": args.data, "out": args.out, "metrics": metrics,
                    "samples": len(samples),
                    "network": model.cfg.to_dict(), "train": tcfg.to_dict()})
    result = train_model(model, samples, tcfg, ckpt_path=args.out,
                         metrics_path=metrics, resume=args.resume,
                         log=print)
    print(f"trained {result.steps_run} steps, final loss "
          f"{result.final_loss:.6f}, checkpoint {args.out}")
    return 0


# -- eval ------------------------------------------------------------------------


def _load_checkpointed_model(ckpt: str, variant: str | None):
    from .checkpoint import load_into_model
    from .errors import CheckpointError
    from .network import NetworkConfig, build_network

    sidecar = Path(str(ckpt) + ".json")
    meta = _read_json(sidecar) if sidecar.exists() else {}
    cfg = NetworkConfig.from_dict(meta.get("network", {}))
    runtime = variant or cfg.variant
    if runtime != cfg.variant and runtime != "no-de":
        raise CheckpointError(
            f"cannot evaluate a {cfg.variant!r} checkpoint as {runtime!r}: "
            "parameter sets differ; retrain with that variant instead")
    # build with the stored variant so the parameter sets line up, then
    # flip the runtime path; no-de only drops the learned upsampler
    model = build_network(cfg, seed=0)
    step, _ = load_into_model(ckpt, model)
    model.cfg.variant = runtime
    return model, step


def _cmd_eval(args) -> int:
    from .evaluate import (evaluate, fpan_localizer, precision_curve,
                           write_curve_csv, write_report_csv)
    from .synth import load_dataset

    model, step = _load_checkpointed_model(args.ckpt, args.variant)
    samples = load_dataset(args.data)
    report = evaluate(fpan_localizer(model), samples,
                      iou_threshold=args.iou_threshold, repeats=args.repeats)
    write_report_csv(args.report, report)
    if args.curve:
        write_curve_csv(args.curve, precision_curve(report))
    _echo("eval", {"ckpt": args.ckpt, "step": step, "data": args.data,
                   "variant": model.cfg.variant, "samples": len(report),
                   "alp": round(report.alp, 4), "aiou": round(report.aiou, 6),
                   "mean_time_s": round(report.mean_time_s, 6),
                   "report": args.report})
    return 0


def _cmd_baseline(args) -> int:
    from .evaluate import (baseline_localizer, evaluate, precision_curve,
                           write_curve_csv, write_report_csv)
    from .synth import load_dataset

    samples = load_dataset(args.data)
    loc = baseline_localizer(method=args.method, rerank=not args.no_rerank,
                             k=args.k)
    report = evaluate(loc, samples, iou_threshold=args.iou_threshold,
                      repeats=args.repeats)
    write_report_csv(args.report, report)
    if args.curve:
        write_curve_csv(args.curve, precision_curve(report))
    _echo("baseline", {"method": args.method, "rerank": not args.no_rerank,
                       "data": args.data, "samples": len(report),
                       "alp": round(report.alp, 4),
                       "aiou": round(report.aiou, 6), "report": args.report})
    return 0


# -- track -----------------------------------------------------------------------


def _cmd_track(args) -> int:
    from .boxes import iou
    from .synth import load_dataset
    from .tracking import (fpan_region_localizer, track_sequence,
                           tracking_metrics)

    model, step = _load_checkpointed_model(args.ckpt, args.variant)
    frames = load_dataset(args.seq)
    if len(frames) < 2:
        raise ValueError(f"sequence {args.seq} has {len(frames)} frames, "
                         "tracking needs at least 2")
    inner = fpan_region_localizer(model)
    times = []

    def timed(region, query, tf):
        t0 = time.perf_counter()
        box = inner(region, query, tf)
        times.append(time.perf_counter() - t0)
        return box

    track = track_sequence(timed, [f.image for f in frames],
                           frames[0].gt_box,
                           model_input=model.cfg.input_size,
                           query_size=model.cfg.query_size,
                           min_box=args.min_box)
    gt = [f.gt_box for f in frames]
    metrics = tracking_metrics(track[1:], gt[1:],
                               precision_threshold=args.precision_threshold)
    lines = ["sample,iou,time_s,success"]
    for t in range(1, len(frames)):
        overlap = iou(track[t], gt[t])
        lines.append(f"{t},{overlap:.6f},{times[t - 1]:.6f},"
                     f"{int(overlap >= 0.5)}")
    lines.append(f"# mean_iou={metrics.mean_iou:.6f} "
                 f"precision@{metrics.precision_threshold:g}px="
                 f"{metrics.precision:.6f} "
                 f"success_auc={metrics.success_auc:.6f}")
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _echo("track", {"ckpt": args.ckpt, "step": step, "seq": args.seq,
                    "frames": len(frames), "mean_iou": round(metrics.mean_iou, 6),
                    "precision": round(metrics.precision, 6),
                    "success_auc": round(metrics.success_auc, 6),
                    "report": args.report})
    return 0


# -- curve -----------------------------------------------------------------------


def _read_report_ious(path: str) -> list[float]:
    ious = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "sample,iou,time_s,success":
            raise ValueError(f"{path} is not a report CSV (header {header!r})")
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            ious.append(float(line.split(",")[1]))
    if not ious:
        raise ValueError(f"{path} holds no samples")
    return ious


def _cmd_curve(args) -> int:
    from .evaluate import (CURVE_TAUS, EvalRecord, EvalReport,
                           precision_curve, write_curve_csv, write_curve_svg)

    curves = {}
    for path in args.report:
        ious = _read_report_ious(path)
        records = tuple(EvalRecord(i, v, 0.0, v >= 0.5)
                        for i, v in enumerate(ious))
        curves[Path(path).stem] = precision_curve(EvalReport(records, 0.5))
    write_curve_svg(args.svg, curves)
    if args.csv:
        if len(curves) != 1:
            raise ValueError("--csv expects exactly one --report")
        write_curve_csv(args.csv, next(iter(curves.values())))
    _echo("curve", {"reports": list(args.report), "svg": args.svg,
                    "taus": len(CURVE_TAUS)})
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fpan",
        description="query-based object localization: data, training, "
                    "evaluation, baselines, tracking")
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP thread pools before numpy loads")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--spec", help="JSON file of dataset fields")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n-images", type=int)
    g.add_argument("--image-size", type=int)
    g.add_argument("--min-digits", type=int)
    g.add_argument("--noise", type=float, help="salt-noise pixel density")
    g.add_argument("--background", help="black, texture, or a .ppm directory")
    g.add_argument("--max-overlap", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--sequence", action="store_true",
                   help="emit one moving-target sequence instead of scenes")
    g.add_argument("--glyphs", help="IDX image file for the glyph bank")
    g.add_argument("--glyph-labels", help="IDX label file (defaults near "
                                          "--glyphs)")
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a localization network")
    t.add_argument("--data", required=True, help="dataset directory")
    t.add_argument("--config", help="JSON with network/train sections")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--metrics", help="metrics CSV (default: <out>.metrics.csv)")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--variant", choices=("full", "ss", "no-de"))
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("rmsprop", "adam"))
    t.add_argument("--stop-loss", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-expand-targets", action="store_true",
                   help="train only on each scene's designated target "
                        "instead of one sample per placed digit")
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--variant", choices=("full", "ss", "no-de"),
                   help="override the runtime variant (full -> no-de only)")
    e.add_argument("--report", required=True, help="per-sample CSV out")
    e.add_argument("--curve", help="also write a tau,precision CSV")
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.add_argument("--repeats", type=int, default=3,
                   help="timing repeats per sample (median is reported)")
    e.set_defaults(func=_cmd_eval)

    b = sub.add_parser("baseline", help="evaluate a template-matching baseline")
    b.add_argument("--method", required=True, choices=("ccorr", "ccoeff"))
    b.add_argument("--data", required=True)
    b.add_argument("--report", required=True)
    b.add_argument("--curve", help="also write a tau,precision CSV")
    b.add_argument("--no-rerank", action="store_true",
                   help="skip the color-histogram rerank stage")
    b.add_argument("--k", type=int, default=5, help="candidates to rerank")
    b.add_argument("--iou-threshold", type=float, default=0.5)
    b.add_argument("--repeats", type=int, default=3)
    b.set_defaults(func=_cmd_baseline)

    k = sub.add_parser("track", help="track through a sequence dataset")
    k.add_argument("--ckpt", required=True)
    k.add_argument("--seq", required=True, help="sequence dataset directory")
    k.add_argument("--report", required=True)
    k.add_argument("--variant", choices=("full", "ss", "no-de"))
    k.add_argument("--min-box", type=int, default=8)
    k.add_argument("--precision-threshold", type=float, default=20.0)
    k.set_defaults(func=_cmd_track)

    c = sub.add_parser("curve", help="plot precision curves from report CSVs")
    c.add_argument("--report", action="append", required=True,
                   help="report CSV (repeat for several curves)")
    c.add_argument("--svg", required=True, help="SVG plot out")
    c.add_argument("--csv", help="also write tau,precision for a single report")
    c.set_defaults(func=_cmd_curve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _set_threads(args.threads)
    try:
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except Exception as exc:  # structured error, nonzero exit
        from .errors import FpanError

        if isinstance(exc, (FpanError, OSError, ValueError, KeyError,
                            TypeError, json.JSONDecodeError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
