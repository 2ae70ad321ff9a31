"""Command-line entry point tying the pipeline together.

Subcommands: gen, sample, train, track, eval, report, sweep, serve. Each one
accepts --config pointing at a JSON file whose keys mirror the flags; explicit
flags win over config values. Exit codes: 0 success, 1 bad input, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import difflib
import json
import os
import sys

import numpy as np

from . import core, evaluation, imaging, synth, tracker, triplets
from . import embednet


class CliError(Exception):
    """Input/validation problem; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


SUBCOMMANDS = ("gen", "sample", "train", "track", "eval", "report", "sweep", "serve")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise CliError(f"config {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return doc


def _merged(args: argparse.Namespace, config: dict, key: str, default):
    """Flag if given, else config-file value, else default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in config:
        return config[key]
    return default


def _require_file(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise CliError(f"{what} not found: {path}")
    return path


def _build_parser() -> _Parser:
    parser = _Parser(prog="seatrack", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen", help="generate a synthetic sequence")
    p.add_argument("--preset", choices=synth.PRESET_NAMES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("sample", help="build a triplet dataset from annotations")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--water", default=None)
    p.add_argument("--out", required=True, help="output prefix (.npy and .json)")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--augment", action="store_true", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("train", help="train the embedding network")
    p.add_argument("--dataset", required=True, help="dataset prefix from `sample`")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--arch", choices=(embednet.FC_ONLY, embednet.CONV), default=None)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--optimizer", choices=(embednet.SGD, embednet.ADAM), default=None)
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("track", help="run the tracker over a sequence")
    p.add_argument("--manifest", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="track output JSON")
    p.add_argument("--timing", default=None, help="per-frame timing CSV")
    p.add_argument("--lambda", dest="lambda_weight", type=float, default=None)
    p.add_argument("--cost-threshold", type=float, default=None)
    p.add_argument("--init-distance", type=float, default=None)
    p.add_argument("--n-init", type=int, default=None)
    p.add_argument("--max-age", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--metric", choices=(tracker.SQ_EUCLIDEAN, tracker.COSINE), default=None)
    p.add_argument("--min-confidence", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("eval", help="score a track output against ground truth")
    p.add_argument("--gt", required=True)
    p.add_argument("--tracks", required=True)
    p.add_argument("--out", default=None, help="report JSON path")
    p.add_argument("--match", choices=(evaluation.IOU_MATCHING, evaluation.CENTROID_MATCHING),
                   default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("report", help="object-pair embedding distance matrix")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None, help="matrix CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    p = sub.add_parser("sweep", help="staged parameter sweep")
    p.add_argument("--config", required=True, help="sweep definition JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--manifest", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--detections", default=None)
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--ui-dir", default=None)
    p.add_argument("--preassign-gate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)

    return parser


def _cmd_gen(args) -> int:
    config = _load_config(args.config)
    seed = _merged(args, config, "seed", None)
    cfg = synth.preset(args.preset, seed=seed)
    scene = synth.generate(cfg)
    os.makedirs(args.out, exist_ok=True)
    manifest = synth.write_scene(scene, args.out, args.preset.lower())
    print(f"wrote {manifest.frame_count} frames to {args.out}")
    return 0


def _cmd_sample(args) -> int:
    config = _load_config(args.config)
    manifest = core.read_manifest(_require_file(args.manifest, "manifest"))
    annotations = core.read_annotations(_require_file(args.annotations, "annotations"))
    water = []
    if args.water:
        water = [g.box for g in core.read_annotations(_require_file(args.water, "water file"))]
    jitter = triplets.JitterConfig(
        max_translation_frac=_merged(args, config, "max_translation_frac", 0.2),
        scale_range=tuple(_merged(args, config, "scale_range", (0.8, 1.2))),
        samples_per_anchor=_merged(args, config, "samples", 3),
        seed=_merged(args, config, "seed", 0) or 0,
    )
    augment = triplets.AugmentConfig(
        enabled=bool(_merged(args, config, "augment", False)),
        max_shear=_merged(args, config, "max_shear", 0.2),
        max_rotation=_merged(args, config, "max_rotation", float(np.deg2rad(15.0))),
        probability=_merged(args, config, "probability", 0.5),
    )
    patch = _merged(args, config, "patch", 24)
    dataset, report = triplets.build_triplet_dataset(
        manifest, annotations, jitter, augment, patch, water_boxes=water
    )
    triplets.save_triplet_dataset(args.out + ".npy", args.out + ".json", dataset, report)
    print(
        f"built {report.triplets} triplets "
        f"({report.skipped_samples} samples skipped, "
        f"{len(report.anchors_without_negatives)} anchors without negatives)"
    )
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args.config)
    dataset = triplets.load_triplet_dataset(
        _require_file(args.dataset + ".npy", "dataset"),
        _require_file(args.dataset + ".json", "dataset manifest"),
    )
    if not dataset:
        raise CliError(f"dataset {args.dataset} is empty")
    patch = dataset[0].anchor.shape[0]
    declared = _merged(args, config, "patch", patch)
    if declared != patch:
        raise CliError(f"dataset patches are {patch}px, --patch says {declared}")
    net_cfg = embednet.NetConfig(
        architecture=_merged(args, config, "arch", embednet.CONV),
        patch_resolution=patch,
        conv1_channels=_merged(args, config, "conv1_channels", 8),
        conv2_channels=_merged(args, config, "conv2_channels", 16),
        hidden_units=_merged(args, config, "hidden_units", 64),
        embedding_dim=_merged(args, config, "embedding_dim", 32),
        margin=_merged(args, config, "margin", 1.0),
    )
    train_cfg = embednet.TrainConfig(
        epochs=_merged(args, config, "epochs", 10),
        batch_size=_merged(args, config, "batch_size", 32),
        learning_rate=_merged(args, config, "learning_rate", 1e-3),
        optimizer=_merged(args, config, "optimizer", embednet.ADAM),
        seed=_merged(args, config, "seed", 0) or 0,
        log_path=args.log,
    )
    weights, log = embednet.train(net_cfg, train_cfg, dataset)
    embednet.save_weights(args.out, net_cfg, weights)
    final = np.mean([loss for e, _, loss in log if e == train_cfg.epochs - 1])
    print(f"trained {train_cfg.epochs} epochs, final mean loss {final:.4f}, saved {args.out}")
    return 0


def _tracker_config(args, config: dict) -> tracker.TrackerConfig:
    return tracker.TrackerConfig(
        lambda_weight=_merged(args, config, "lambda_weight", 0.5),
        cost_threshold=_merged(args, config, "cost_threshold", 0.4),
        init_distance_threshold=_merged(args, config, "init_distance", 50.0),
        n_init=_merged(args, config, "n_init", 2),
        max_age=_merged(args, config, "max_age", 30),
        budget=_merged(args, config, "budget", 30),
        appearance_metric=_merged(args, config, "metric", tracker.SQ_EUCLIDEAN),
        min_confidence=_merged(args, config, "min_confidence", 0.0),
    )


def _cmd_track(args) -> int:
    config = _load_config(args.config)
    manifest = core.read_manifest(_require_file(args.manifest, "manifest"))
    detections = core.read_detections(_require_file(args.detections, "detections"))
    net_cfg, weights = embednet.load_weights(_require_file(args.checkpoint, "checkpoint"))
    tcfg = _tracker_config(args, config)
    boxes, timings = tracker.run_sequence(tcfg, manifest, detections, net_cfg, weights)
    tracker.write_track_output(args.out, boxes, manifest.name)
    if args.timing:
        tracker.write_timings(args.timing, timings)
    for frame_id, ms in timings:
        print(f"frame {frame_id}: {ms:.2f} ms")
    mean_ms = np.mean([ms for _, ms in timings]) if timings else 0.0
    print(f"mean step time: {mean_ms:.2f} ms over {len(timings)} frames")
    print(f"wrote tracks to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    config = _load_config(args.config)
    gt = core.read_annotations(_require_file(args.gt, "ground truth"))
    tracks = core.read_annotations(_require_file(args.tracks, "track output"))
    mode = _merged(args, config, "match", evaluation.IOU_MATCHING)
    report = evaluation.evaluate(gt, tracks, mode=mode)
    if args.out:
        core.atomic_write_text(args.out, report.to_json())
    print(f"MOTA {report.mota:.4f} over {report.frames_scored} scorable frames")
    return 0


def _cmd_report(args) -> int:
    manifest = core.read_manifest(_require_file(args.manifest, "manifest"))
    annotations = core.read_annotations(_require_file(args.annotations, "annotations"))
    net_cfg, weights = embednet.load_weights(_require_file(args.checkpoint, "checkpoint"))
    report = evaluation.distance_matrix_report(annotations, manifest, net_cfg, weights)
    csv_text = report.to_csv()
    if args.out:
        core.atomic_write_text(args.out, csv_text)
    print(csv_text, end="")
    if report.excluded:
        print(f"excluded objects with fewer than two samples: {report.excluded}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args.config)
    for key in ("checkpoint", "validation", "stages"):
        if key not in config:
            raise CliError(f"sweep config missing {key!r}")
    base = _tracker_config(argparse.Namespace(), config.get("tracker", {}))
    validation = []
    root = os.path.dirname(os.path.abspath(args.config))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(root, p)

    for entry in config["validation"]:
        manifest = core.read_manifest(_require_file(resolve(entry["manifest"]), "manifest"))
        validation.append(
            evaluation.ValidationSequence(
                manifest=manifest,
                detections=core.read_detections(
                    _require_file(resolve(entry["detections"]), "detections")
                ),
                ground_truth=core.read_annotations(
                    _require_file(resolve(entry["gt"]), "ground truth")
                ),
                name=entry.get("name", manifest.name),
            )
        )
    stages = []
    for spec in config["stages"]:
        kind = spec["stage"]
        candidates = spec["candidates"]
        if kind == evaluation.CHECKPOINTS:
            candidates = [resolve(c) for c in candidates]
        stages.append(evaluation.SweepStage(kind, tuple(candidates)))
    result = evaluation.sweep(
        stages, base, resolve(config["checkpoint"]), validation,
        match_mode=config.get("match", evaluation.IOU_MATCHING),
    )
    os.makedirs(args.out, exist_ok=True)
    core.atomic_write_text(os.path.join(args.out, "sweep_tables.csv"),
                           evaluation.sweep_tables_csv(result))
    best = {
        "checkpoint": result.best_checkpoint,
        "tracker": {
            "lambda_weight": result.best_config.lambda_weight,
            "cost_threshold": result.best_config.cost_threshold,
            "init_distance": result.best_config.init_distance_threshold,
            "n_init": result.best_config.n_init,
            "max_age": result.best_config.max_age,
            "budget": result.best_config.budget,
            "metric": result.best_config.appearance_metric,
            "min_confidence": result.best_config.min_confidence,
        },
    }
    core.atomic_write_text(os.path.join(args.out, "best.json"),
                           json.dumps(best, indent=2) + "\n")
    for kind, rows in result.tables:
        print(f"stage {kind}:")
        for label, score in rows:
            print(f"  {label}: {'failed' if score is None else f'{score:.4f}'}")
    print(f"best config written to {os.path.join(args.out, 'best.json')}")
    return 0


def _cmd_serve(args) -> int:
    from . import service

    config = _load_config(args.config)
    gate = _merged(args, config, "preassign_gate", 50.0)
    service.serve(
        manifest_path=_require_file(args.manifest, "manifest"),
        annotations_path=args.annotations,
        port=args.port,
        detections_path=args.detections,
        ui_dir=args.ui_dir,
        preassign_gate=gate,
    )
    return 0


_HANDLERS = {
    "gen": _cmd_gen,
    "sample": _cmd_sample,
    "train": _cmd_train,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "sweep": _cmd_sweep,
    "serve": _cmd_serve,
}


def run(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        message = str(e)
        bad = argv[0] if argv else ""
        if "invalid choice" in message and bad in message:
            hints = difflib.get_close_matches(bad, SUBCOMMANDS, n=1)
            if hints:
                message += f" (did you mean {hints[0]!r}?)"
        print(f"error: {message}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help lands here with code 0
        return int(e.code or 0)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        return _HANDLERS[args.command](args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (core.FormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
