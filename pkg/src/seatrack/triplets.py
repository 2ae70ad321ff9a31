"""Artificial triplet construction: jittered positives around each annotated
box, negatives from other objects and declared water regions, with optional
shear/rotation augmentation of the positive patch.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, GroundTruthBox, SequenceManifest, atomic_write_text
from .imaging import AffineParams, apply_affine, extract_patch, load_image

WATER_SOURCE = "water"


@dataclass(frozen=True)
class JitterConfig:
    """Uniform scale/translation sampling around an anchor box."""

    max_translation_frac: float = 0.2
    scale_range: tuple[float, float] = (0.8, 1.2)
    samples_per_anchor: int = 3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.max_translation_frac < 0.5:
            raise ValueError(
                f"max_translation_frac must be in [0, 0.5), got {self.max_translation_frac}"
            )
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < low <= high, got {self.scale_range}")
        if self.samples_per_anchor < 1:
            raise ValueError("samples_per_anchor must be >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    """Random shear/rotation applied to positive patches."""

    enabled: bool = False
    max_shear: float = 0.2
    max_rotation: float = np.deg2rad(15.0)
    probability: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0,1], got {self.probability}")


@dataclass
class Triplet:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    anchor_object_id: int
    negative_source: str  # "object:<id>" or "water"
    frame_id: int = 0


@dataclass
class BuildReport:
    """Bookkeeping for triplet-set construction."""

    triplets: int = 0
    skipped_samples: int = 0
    anchors_without_negatives: list[tuple[int, int]] = field(default_factory=list)
    provenance: list[dict] = field(default_factory=list)


def object_source(object_id: int) -> str:
    return f"object:{object_id}"


def _jitter_once(box: BoundingBox, cfg: JitterConfig, rng: np.random.Generator):
    dx = rng.uniform(-1.0, 1.0) * cfg.max_translation_frac * box.w
    dy = rng.uniform(-1.0, 1.0) * cfg.max_translation_frac * box.h
    scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    w = box.w * scale
    h = box.h * scale
    # center-displacement form keeps the zero-jitter case bit-exact
    x = box.x + dx + (box.w - w) / 2
    y = box.y + dy + (box.h - h) / 2
    return BoundingBox(x, y, w, h), {"dx": dx, "dy": dy, "scale": scale}


def _clip_to_bounds(box: BoundingBox, width: float, height: float) -> BoundingBox | None:
    x0 = max(box.x, 0.0)
    y0 = max(box.y, 0.0)
    x1 = min(box.x + box.w, width)
    y1 = min(box.y + box.h, height)
    if x1 - x0 < 2.0 or y1 - y0 < 2.0:
        return None
    if x0 == box.x and y0 == box.y and x1 == box.x + box.w and y1 == box.y + box.h:
        return box
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def sample_positive_boxes(
    box: BoundingBox,
    cfg: JitterConfig,
    img_bounds: tuple[float, float],
    rng: np.random.Generator | None = None,
) -> list[BoundingBox]:
    """Draw jittered/scaled boxes around an anchor, clipped to the image.

    Boxes that shrink below 2x2 px after clipping are skipped, so fewer than
    ``samples_per_anchor`` boxes may come back.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    width, height = img_bounds
    out = []
    for _ in range(cfg.samples_per_anchor):
        jittered, _ = _jitter_once(box, cfg, rng)
        clipped = _clip_to_bounds(jittered, width, height)
        if clipped is not None:
            out.append(clipped)
    return out


def collect_negatives(
    frame_annotations: list[GroundTruthBox],
    anchor_id: int,
    water_boxes: list[BoundingBox],
) -> list[tuple[BoundingBox, str]]:
    """Boxes usable as negatives for an anchor: other objects, then water."""
    negatives = [
        (gt.box, object_source(gt.object_id))
        for gt in sorted(frame_annotations, key=lambda g: g.object_id)
        if gt.object_id != anchor_id
    ]
    negatives.extend((box, WATER_SOURCE) for box in water_boxes)
    return negatives


def _augment_draw(cfg: AugmentConfig, rng: np.random.Generator):
    # always burn the same draws so jitter streams line up across augment on/off runs
    coin = rng.uniform()
    applied = bool(cfg.enabled and coin < cfg.probability)
    params = AffineParams(
        shear_x=rng.uniform(-cfg.max_shear, cfg.max_shear),
        shear_y=rng.uniform(-cfg.max_shear, cfg.max_shear),
        rotation=rng.uniform(-cfg.max_rotation, cfg.max_rotation),
    )
    return applied, params


def build_triplet_dataset(
    sequence: SequenceManifest,
    annotations: list[GroundTruthBox],
    jitter: JitterConfig,
    augment: AugmentConfig,
    patch_resolution: int,
    water_boxes: list[BoundingBox] | None = None,
) -> tuple[list[Triplet], BuildReport]:
    """Build the full artificial-triplet set for one annotated sequence.

    For every annotated object instance the anchor is its own patch, the
    positives are jittered (optionally augmented) crops, and each positive is
    paired round-robin with the frame's negatives (other objects first, then
    water). Frames without negatives fall back to other frames' objects;
    anchors with no negative anywhere are dropped and reported. Output order
    is (frame_id, object_id, sample index) regardless of execution order.
    """
    water_boxes = list(water_boxes or [])
    by_frame: dict[int, list[GroundTruthBox]] = {}
    for gt in annotations:
        by_frame.setdefault(gt.frame_id, []).append(gt)

    # fallback negatives, keyed by the object id to exclude
    all_instances = sorted(annotations, key=lambda g: (g.frame_id, g.object_id))
    images: dict[int, np.ndarray] = {}

    def frame_image(frame_id: int) -> np.ndarray:
        if frame_id not in images:
            path = sequence.frame_path(frame_id)
            try:
                images[frame_id] = load_image(path)
            except FileNotFoundError:
                raise FileNotFoundError(
                    f"frame {frame_id} image missing for sequence {sequence.name!r}: {path}"
                ) from None
        return images[frame_id]

    bounds = (float(sequence.image_width), float(sequence.image_height))
    triplets: list[Triplet] = []
    report = BuildReport()

    for frame_id in sorted(by_frame):
        frame_anns = by_frame[frame_id]
        for gt in sorted(frame_anns, key=lambda g: g.object_id):
            negatives = [
                (frame_id, box, src)
                for box, src in collect_negatives(frame_anns, gt.object_id, water_boxes)
            ]
            if not negatives:
                negatives = [
                    (other.frame_id, other.box, object_source(other.object_id))
                    for other in all_instances
                    if other.object_id != gt.object_id
                ]
            if not negatives:
                report.anchors_without_negatives.append((frame_id, gt.object_id))
                continue

            anchor_patch = extract_patch(frame_image(frame_id), gt.box, patch_resolution)
            rng_jitter = np.random.default_rng([jitter.seed, frame_id, gt.object_id, 0])
            rng_aug = np.random.default_rng([jitter.seed, frame_id, gt.object_id, 1])
            # rotate the round-robin start per anchor so every negative,
            # water included, gets drawn over the sequence
            rotation = frame_id + gt.object_id

            for s in range(jitter.samples_per_anchor):
                jittered, draw = _jitter_once(gt.box, jitter, rng_jitter)
                applied, params = _augment_draw(augment, rng_aug)
                clipped = _clip_to_bounds(jittered, *bounds)
                if clipped is None:
                    report.skipped_samples += 1
                    continue
                positive = extract_patch(frame_image(frame_id), clipped, patch_resolution)
                if applied:
                    positive = apply_affine(positive, params)
                neg_frame, neg_box, neg_src = negatives[(s + rotation) % len(negatives)]
                negative = extract_patch(frame_image(neg_frame), neg_box, patch_resolution)
                triplets.append(
                    Triplet(anchor_patch, positive, negative, gt.object_id, neg_src, frame_id)
                )
                report.provenance.append(
                    {
                        "frame_id": frame_id,
                        "object_id": gt.object_id,
                        "sample_index": s,
                        "jitter": draw,
                        "augment": {
                            "applied": applied,
                            "shear_x": params.shear_x,
                            "shear_y": params.shear_y,
                            "rotation": params.rotation,
                        },
                        "negative": {
                            "frame_id": neg_frame,
                            "source": neg_src,
                            "x": neg_box.x,
                            "y": neg_box.y,
                            "w": neg_box.w,
                            "h": neg_box.h,
                        },
                    }
                )
    report.triplets = len(triplets)
    return triplets, report


def save_triplet_dataset(path: str, manifest_path: str, triplets: list[Triplet],
                         report: BuildReport) -> None:
    """Store patches as one float32 .npy stack plus a provenance manifest."""
    if triplets:
        stack = np.stack(
            [np.stack([t.anchor, t.positive, t.negative]) for t in triplets]
        ).astype(np.float32)
    else:
        stack = np.zeros((0, 3, 0, 0), dtype=np.float32)
    from io import BytesIO

    buf = BytesIO()
    np.save(buf, stack)
    from .core import atomic_write_bytes

    atomic_write_bytes(path, buf.getvalue())
    doc = {
        "count": len(triplets),
        "skipped_samples": report.skipped_samples,
        "anchors_without_negatives": [list(a) for a in report.anchors_without_negatives],
        "records": [
            {
                "anchor_object_id": t.anchor_object_id,
                "negative_source": t.negative_source,
                "frame_id": t.frame_id,
            }
            for t in triplets
        ],
        "provenance": report.provenance,
    }
    atomic_write_text(manifest_path, json.dumps(doc, indent=2) + "\n")


def load_triplet_dataset(path: str, manifest_path: str) -> list[Triplet]:
    stack = np.load(path).astype(np.float64)
    with open(manifest_path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    records = doc["records"]
    if len(records) != stack.shape[0]:
        raise ValueError(
            f"dataset manifest lists {len(records)} triplets but array holds {stack.shape[0]}"
        )
    return [
        Triplet(
            stack[i, 0],
            stack[i, 1],
            stack[i, 2],
            rec["anchor_object_id"],
            rec["negative_source"],
            rec["frame_id"],
        )
        for i, rec in enumerate(records)
    ]
