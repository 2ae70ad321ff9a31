"""Tracker scoring: ground-truth/track matching, identity-switch counting,
the per-frame-averaged accuracy score, embedding diagnostics, and the staged
parameter sweep that carries each stage's winner into the next.

The accuracy score is the mean over scorable frames (those with at least one
annotated object) of 1 - switches/objects. Misses and false positives are
deliberately not part of the score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .core import BoundingBox, Detection, GroundTruthBox, SequenceManifest, iou
from .tracker import TrackerConfig, hungarian_assign, run_sequence

IOU_MATCHING = "iou"
CENTROID_MATCHING = "centroid"


@dataclass
class FrameEval:
    frame_id: int
    num_objects: int
    num_switches: int
    matches: list  # (object_id, track_id)


@dataclass
class MotaReport:
    frames: list
    mota: float
    frames_scored: int

    def to_json(self) -> str:
        doc = {
            "mota": self.mota,
            "frames_scored": self.frames_scored,
            "frames": [
                {
                    "frame_id": fe.frame_id,
                    "num_objects": fe.num_objects,
                    "num_switches": fe.num_switches,
                    "matches": [[o, t] for o, t in fe.matches],
                }
                for fe in self.frames
            ],
        }
        return json.dumps(doc, indent=2) + "\n"


def match_frame(
    gt_boxes: list[GroundTruthBox],
    track_boxes: list[GroundTruthBox],
    mode: str = IOU_MATCHING,
    iou_threshold: float = 0.3,
    centroid_gate: float = 50.0,
) -> list[tuple[int, int]]:
    """One-to-one GT-to-track correspondence for a single frame.

    IoU mode solves the assignment on 1 - IoU and discards pairs under the
    overlap threshold; centroid mode gates on center distance in pixels.
    """
    if not gt_boxes or not track_boxes:
        return []
    if mode == IOU_MATCHING:
        cost = np.array(
            [[1.0 - iou(g.box, t.box) for t in track_boxes] for g in gt_boxes]
        )
        gate = 1.0 - iou_threshold
    elif mode == CENTROID_MATCHING:
        from .core import centroid_distance

        cost = np.array(
            [[centroid_distance(g.box, t.box) for t in track_boxes] for g in gt_boxes]
        )
        gate = centroid_gate
    else:
        raise ValueError(f"unknown matching mode {mode!r}")
    matches, _, _ = hungarian_assign(cost, gate)
    return [(gt_boxes[r].object_id, track_boxes[c].object_id) for r, c in matches]


def count_switches(
    frame_matches: list[tuple[int, list[tuple[int, int]]]],
) -> dict[int, int]:
    """Per-frame identity-switch counts.

    A switch is counted for an object whose matched track id differs from its
    previous non-null matched id; unmatched frames leave that memory intact
    and an object's first-ever match never counts.
    """
    last_track: dict[int, int] = {}
    switches: dict[int, int] = {}
    for frame_id, matches in sorted(frame_matches, key=lambda fm: fm[0]):
        count = 0
        for object_id, track_id in matches:
            prev = last_track.get(object_id)
            if prev is not None and prev != track_id:
                count += 1
            last_track[object_id] = track_id
        switches[frame_id] = count
    return switches


def evaluate(
    ground_truth: list[GroundTruthBox],
    tracks: list[GroundTruthBox],
    mode: str = IOU_MATCHING,
    iou_threshold: float = 0.3,
    centroid_gate: float = 50.0,
) -> MotaReport:
    """Match every frame, count switches, and aggregate the accuracy score."""
    gt_by_frame: dict[int, list[GroundTruthBox]] = {}
    for g in ground_truth:
        gt_by_frame.setdefault(g.frame_id, []).append(g)
    tr_by_frame: dict[int, list[GroundTruthBox]] = {}
    for t in tracks:
        tr_by_frame.setdefault(t.frame_id, []).append(t)

    frame_matches = [
        (
            frame_id,
            match_frame(
                gt_by_frame[frame_id],
                tr_by_frame.get(frame_id, []),
                mode=mode,
                iou_threshold=iou_threshold,
                centroid_gate=centroid_gate,
            ),
        )
        for frame_id in sorted(gt_by_frame)
    ]
    switches = count_switches(frame_matches)
    frames = [
        FrameEval(frame_id, len(gt_by_frame[frame_id]), switches[frame_id], matches)
        for frame_id, matches in frame_matches
    ]
    return mota(frames)


def mota(frames: list[FrameEval]) -> MotaReport:
    """Average per-frame (1 - switches/objects) over frames with objects."""
    scorable = [fe for fe in frames if fe.num_objects > 0]
    if not scorable:
        raise ValueError("no scorable frames (every frame has zero objects)")
    score = float(
        np.mean([1.0 - fe.num_switches / fe.num_objects for fe in scorable])
    )
    return MotaReport(frames, score, len(scorable))


@dataclass
class DistanceMatrixReport:
    object_ids: list[int]
    matrix: np.ndarray
    excluded: list[int]

    def diagonal_is_row_minimum(self) -> bool:
        m = self.matrix
        for i in range(len(self.object_ids)):
            others = np.delete(m[i], i)
            if others.size and not np.all(m[i, i] < others):
                return False
        return True

    def to_csv(self) -> str:
        lines = ["object," + ",".join(str(o) for o in self.object_ids) + "\n"]
        for oid, row in zip(self.object_ids, self.matrix):
            lines.append(f"{oid}," + ",".join(repr(float(x)) for x in row) + "\n")
        return "".join(lines)


def distance_matrix_report(
    annotations: list[GroundTruthBox],
    manifest: SequenceManifest,
    net_cfg,
    weights,
    max_samples_per_object: int = 24,
    images: dict[int, np.ndarray] | None = None,
) -> DistanceMatrixReport:
    """Mean pairwise embedding distance between every pair of objects.

    Entry (i, j) averages squared Euclidean distances between object i's and
    object j's sampled patches; the diagonal averages distinct same-object
    pairs. Objects with fewer than two samples are excluded and reported.
    """
    from .embednet import forward_batch
    from .imaging import extract_patch, load_image

    by_object: dict[int, list[GroundTruthBox]] = {}
    for g in annotations:
        by_object.setdefault(g.object_id, []).append(g)

    if len(by_object) < 2:
        raise ValueError("distance matrix needs at least two annotated objects")

    if images is None:
        images = {}
    embeddings: dict[int, np.ndarray] = {}
    excluded = []
    for object_id in sorted(by_object):
        instances = sorted(by_object[object_id], key=lambda g: g.frame_id)
        if len(instances) < 2:
            excluded.append(object_id)
            continue
        if len(instances) > max_samples_per_object:
            idx = np.linspace(0, len(instances) - 1, max_samples_per_object).astype(int)
            instances = [instances[i] for i in idx]
        patches = []
        for g in instances:
            if g.frame_id not in images:
                images[g.frame_id] = load_image(manifest.frame_path(g.frame_id))
            patches.append(extract_patch(images[g.frame_id], g.box, net_cfg.patch_resolution))
        embeddings[object_id], _ = forward_batch(net_cfg, weights, np.stack(patches))

    ids = sorted(embeddings)
    k = len(ids)
    matrix = np.zeros((k, k))
    for a in range(k):
        for b in range(a, k):
            ea, eb = embeddings[ids[a]], embeddings[ids[b]]
            d2 = np.sum((ea[:, None, :] - eb[None, :, :]) ** 2, axis=2)
            if a == b:
                n = d2.shape[0]
                matrix[a, a] = float(np.sum(d2) / (n * (n - 1)))  # distinct pairs only
            else:
                matrix[a, b] = matrix[b, a] = float(np.mean(d2))
    return DistanceMatrixReport(ids, matrix, excluded)


def retrieval_accuracy(
    anchor_embeddings: np.ndarray,
    anchor_ids: list[int],
    query_embeddings: np.ndarray,
    query_ids: list[int],
) -> float:
    """Fraction of queries whose nearest anchor shares their object id."""
    if len(anchor_ids) == 0 or len(query_ids) == 0:
        raise ValueError("retrieval needs non-empty anchor and query sets")
    d2 = np.sum(
        (query_embeddings[:, None, :] - anchor_embeddings[None, :, :]) ** 2, axis=2
    )
    nearest = np.argmin(d2, axis=1)
    anchor_ids = np.asarray(anchor_ids)
    hits = anchor_ids[nearest] == np.asarray(query_ids)
    return float(np.mean(hits))


CHECKPOINTS = "CHECKPOINTS"
COST_METRICS = "COST_METRICS"
TRACKER_PARAMS = "TRACKER_PARAMS"

COST_METRIC_LAMBDAS = {
    "appearance": 0.0,
    "distance": 1.0,
    "appearance+distance": 0.5,
}


@dataclass(frozen=True)
class SweepStage:
    kind: str
    candidates: tuple

    def __post_init__(self):
        if self.kind not in (CHECKPOINTS, COST_METRICS, TRACKER_PARAMS):
            raise ValueError(f"unknown sweep stage {self.kind!r}")
        if not self.candidates:
            raise ValueError(f"sweep stage {self.kind} has no candidates")


@dataclass
class ValidationSequence:
    manifest: SequenceManifest
    detections: list[Detection]
    ground_truth: list[GroundTruthBox]
    name: str = ""


@dataclass
class SweepResult:
    tables: list  # (stage kind, [(label, score or None)])
    best_checkpoint: str
    best_config: TrackerConfig


def _apply_candidate(kind: str, candidate, checkpoint: str, config: TrackerConfig):
    if kind == CHECKPOINTS:
        return str(candidate), candidate, config
    if kind == COST_METRICS:
        lam = COST_METRIC_LAMBDAS[candidate]
        return candidate, checkpoint, replace(config, lambda_weight=lam)
    overrides = dict(candidate)
    label = ",".join(f"{k}={v}" for k, v in sorted(overrides.items()))
    return label, checkpoint, replace(config, **overrides)


def sweep(
    stages: list[SweepStage],
    base_config: TrackerConfig,
    checkpoint_path: str,
    validation: list[ValidationSequence],
    match_mode: str = IOU_MATCHING,
) -> SweepResult:
    """Evaluate each stage's candidates and propagate the winner forward.

    The score for a candidate is the mean accuracy over the validation
    sequences. A failing candidate scores None and never aborts the sweep;
    ties keep the earliest candidate.
    """
    from .embednet import load_weights

    if not validation:
        raise ValueError("sweep needs at least one validation sequence")

    image_cache: dict[str, dict[int, np.ndarray]] = {v.name: {} for v in validation}
    net_cache: dict[str, tuple] = {}

    def score_candidate(checkpoint: str, config: TrackerConfig):
        if checkpoint not in net_cache:
            net_cache[checkpoint] = load_weights(checkpoint)
        net_cfg, weights = net_cache[checkpoint]
        scores = []
        for seq in validation:
            boxes, _ = run_sequence(
                config, seq.manifest, seq.detections, net_cfg, weights,
                images=image_cache[seq.name],
            )
            scores.append(evaluate(seq.ground_truth, boxes, mode=match_mode).mota)
        return float(np.mean(scores))

    current_checkpoint = checkpoint_path
    current_config = base_config
    tables = []
    for stage in stages:
        rows = []
        best_score = None
        best = None
        for candidate in stage.candidates:
            label, ckpt, cfg = _apply_candidate(
                stage.kind, candidate, current_checkpoint, current_config
            )
            try:
                score = score_candidate(ckpt, cfg)
            except Exception:
                score = None
            rows.append((label, score))
            if score is not None and (best_score is None or score > best_score):
                best_score = score
                best = (ckpt, cfg)
        if best is None:
            raise RuntimeError(f"every candidate failed in sweep stage {stage.kind}")
        current_checkpoint, current_config = best
        tables.append((stage.kind, rows))
    return SweepResult(tables, current_checkpoint, current_config)


def sweep_tables_csv(result: SweepResult) -> str:
    lines = ["stage,candidate,score\n"]
    for kind, rows in result.tables:
        for label, score in rows:
            rendered = "" if score is None else repr(score)
            lines.append(f'{kind},"{label}",{rendered}\n')
    return "".join(lines)
