"""Deterministic synthetic "thermal sea" sequences: images, ground truth,
detections with configurable misses/false positives, and water regions.

Everything is keyed off a single seed through per-frame child generators, so
frames can be rendered in any order and a config always produces bit-identical
output.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .core import (
    BoundingBox,
    Detection,
    GroundTruthBox,
    SequenceManifest,
    centroid_distance,
    iou,
    write_annotations,
    write_detections,
    write_manifest,
)
from .imaging import write_pgm

BACKGROUND_MEAN = 0.12

# per-texture (base brightness, grating angle in degrees, frequency, phase);
# textures 0/1 are brightness twins told apart only by stripe orientation, so
# appearance identity genuinely depends on pattern, not just mean intensity
_TEXTURE_TABLE = (
    (0.60, 0.0, 4.0, 0.00),
    (0.60, 90.0, 5.0, 0.30),
    (0.74, 45.0, 4.0, 0.60),
    (0.86, 135.0, 5.0, 0.15),
    (0.48, 20.0, 6.0, 0.45),
)


@dataclass(frozen=True)
class ObjectSpec:
    """One moving rectangle: initial box, velocity, texture identity.

    ``velocity_changes`` lists (frame, vx, vy) entries taking effect at that
    frame, which is how exits/re-entries are scripted.
    """

    box: BoundingBox
    velocity: tuple[float, float]
    texture_id: int
    velocity_changes: tuple[tuple[int, float, float], ...] = ()


@dataclass(frozen=True)
class SceneConfig:
    width: int
    height: int
    frame_count: int
    objects: tuple[ObjectSpec, ...]
    noise_sigma: float = 0.02
    det_jitter: float = 1.0
    miss_prob: float = 0.0
    fp_rate: float = 0.0
    water_regions: tuple[BoundingBox, ...] = ()
    occlusion_iou: float | None = None  # drop the occluded detection above this overlap
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.miss_prob <= 1.0:
            raise ValueError(f"miss_prob must be in [0,1], got {self.miss_prob}")
        if not 0.0 <= self.fp_rate <= 1.0:
            raise ValueError(f"fp_rate must be in [0,1], got {self.fp_rate}")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")


@dataclass
class Scene:
    """Generated sequence held in memory before being written out."""

    config: SceneConfig
    frames: list[np.ndarray]
    ground_truth: list[GroundTruthBox]
    detections: list[Detection]
    water_regions: list[BoundingBox]


def texture_patch(texture_id: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Oriented-grating texture value at object-relative coordinates (u, v)."""
    base, angle, freq, phase = _TEXTURE_TABLE[texture_id % len(_TEXTURE_TABLE)]
    theta = np.deg2rad(angle)
    along = np.cos(theta) * u + np.sin(theta) * v
    wave = np.sin(2 * np.pi * (freq * along / 24.0 + phase))
    return np.clip(base + 0.22 * wave, 0.0, 1.0)


def _object_box_at(spec: ObjectSpec, frame: int) -> BoundingBox:
    """Integrate the (piecewise-constant) velocity up to `frame`."""
    x, y = spec.box.x, spec.box.y
    vx, vy = spec.velocity
    changes = sorted(spec.velocity_changes)
    t = 0
    for change_frame, nvx, nvy in changes:
        steps = min(frame, change_frame) - t
        if steps <= 0:
            break
        x += vx * steps
        y += vy * steps
        t += steps
        vx, vy = nvx, nvy
    x += vx * (frame - t)
    y += vy * (frame - t)
    return BoundingBox(x, y, spec.box.w, spec.box.h)


def _clip_box(box: BoundingBox, width: int, height: int) -> BoundingBox | None:
    x0 = max(box.x, 0.0)
    y0 = max(box.y, 0.0)
    x1 = min(box.x + box.w, float(width))
    y1 = min(box.y + box.h, float(height))
    if x1 - x0 < 1.0 or y1 - y0 < 1.0:
        return None
    return BoundingBox(x0, y0, x1 - x0, y1 - y0)


def _render_frame(cfg: SceneConfig, frame: int, boxes: list[tuple[int, BoundingBox]]) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, frame, 0])
    if cfg.noise_sigma > 0:
        img = rng.normal(BACKGROUND_MEAN, cfg.noise_sigma, size=(cfg.height, cfg.width))
    else:
        img = np.full((cfg.height, cfg.width), BACKGROUND_MEAN)
    # earlier-listed objects sit on top: draw back-to-front
    for obj_index, box in reversed(boxes):
        spec = cfg.objects[obj_index]
        full = _object_box_at(spec, frame)
        c0 = int(np.ceil(box.x - 0.5))
        r0 = int(np.ceil(box.y - 0.5))
        c1 = int(np.floor(box.x + box.w - 0.5))
        r1 = int(np.floor(box.y + box.h - 0.5))
        c0, r0 = max(c0, 0), max(r0, 0)
        c1, r1 = min(c1, cfg.width - 1), min(r1, cfg.height - 1)
        if c1 < c0 or r1 < r0:
            continue
        cols = np.arange(c0, c1 + 1) + 0.5
        rows = np.arange(r0, r1 + 1) + 0.5
        u, v = np.meshgrid(cols - full.x, rows - full.y)
        img[r0 : r1 + 1, c0 : c1 + 1] = texture_patch(spec.texture_id, u, v)
    return np.clip(img, 0.0, 1.0)


def _occluded_indices(boxes: list[tuple[int, BoundingBox]], threshold: float) -> set[int]:
    """Indices hidden behind an earlier-listed (topmost) box."""
    hidden: set[int] = set()
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            if iou(boxes[i][1], boxes[j][1]) > threshold:
                hidden.add(j)
    return hidden


def generate(cfg: SceneConfig) -> Scene:
    """Render all frames and derive ground truth plus noisy detections."""
    frames: list[np.ndarray] = []
    ground_truth: list[GroundTruthBox] = []
    detections: list[Detection] = []

    for t in range(cfg.frame_count):
        visible: list[tuple[int, BoundingBox]] = []
        for k, spec in enumerate(cfg.objects):
            clipped = _clip_box(_object_box_at(spec, t), cfg.width, cfg.height)
            if clipped is not None:
                visible.append((k, clipped))
        frames.append(_render_frame(cfg, t, visible))

        for k, box in visible:
            ground_truth.append(GroundTruthBox(t, k + 1, box))

        hidden = (
            _occluded_indices(visible, cfg.occlusion_iou)
            if cfg.occlusion_iou is not None
            else set()
        )
        rng = np.random.default_rng([cfg.seed, t, 1])
        for i, (k, box) in enumerate(visible):
            jx, jy = rng.uniform(-cfg.det_jitter, cfg.det_jitter, size=2)
            missed = rng.uniform() < cfg.miss_prob
            if i in hidden or missed:
                continue
            jittered = _clip_box(
                BoundingBox(box.x + jx, box.y + jy, box.w, box.h), cfg.width, cfg.height
            )
            if jittered is not None:
                detections.append(Detection(t, jittered, 1.0, 0))
        if cfg.water_regions and rng.uniform() < cfg.fp_rate:
            region = cfg.water_regions[int(rng.integers(len(cfg.water_regions)))]
            w = min(rng.uniform(16, 30), region.w)
            h = min(rng.uniform(12, 22), region.h)
            x = region.x + rng.uniform(0, region.w - w)
            y = region.y + rng.uniform(0, region.h - h)
            detections.append(Detection(t, BoundingBox(x, y, w, h), 0.5, 0))

    return Scene(cfg, frames, ground_truth, detections, list(cfg.water_regions))


def write_scene(scene: Scene, out_dir: str, name: str) -> SequenceManifest:
    """Write frames plus the manifest/annotation/detection/water files."""
    cfg = scene.config
    frames_dir = os.path.join(out_dir, "frames")
    os.makedirs(frames_dir, exist_ok=True)
    pattern = "frames/{:05d}.pgm"
    for t, img in enumerate(scene.frames):
        write_pgm(os.path.join(out_dir, pattern.format(t)), img)
    manifest = SequenceManifest(
        name=name,
        frame_count=cfg.frame_count,
        image_width=cfg.width,
        image_height=cfg.height,
        image_path_pattern=pattern,
        root=out_dir,
    )
    write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    write_annotations(os.path.join(out_dir, "gt.json"), scene.ground_truth, sequence=name)
    write_detections(os.path.join(out_dir, "detections.csv"), scene.detections)
    water = [
        GroundTruthBox(0, i + 1, box) for i, box in enumerate(scene.water_regions)
    ]
    write_annotations(os.path.join(out_dir, "water.json"), water, sequence=name)
    return manifest


PRESET_NAMES = ("STATIC", "DRIFT", "CROSSING", "REENTRY", "CLUTTER")


def preset(name: str, seed: int | None = None) -> SceneConfig:
    """Named deterministic scene configs used by the acceptance scenarios."""
    key = name.upper()
    if key == "STATIC":
        cfg = SceneConfig(
            width=320,
            height=240,
            frame_count=20,
            objects=(ObjectSpec(BoundingBox(140, 100, 28, 20), (0.0, 0.0), 0),),
            noise_sigma=0.0,
            det_jitter=0.0,
            seed=100,
        )
    elif key == "DRIFT":
        cfg = SceneConfig(
            width=640,
            height=480,
            frame_count=40,
            objects=(
                ObjectSpec(BoundingBox(80, 120, 28, 20), (2.0, 0.0), 0),
                ObjectSpec(BoundingBox(400, 300, 26, 22), (0.0, 2.0), 1),
            ),
            noise_sigma=0.02,
            seed=101,
        )
    elif key == "CROSSING":
        # centers 240 px apart closing at 8 px/frame: coincide at frame 30
        cfg = SceneConfig(
            width=640,
            height=480,
            frame_count=60,
            objects=(
                ObjectSpec(BoundingBox(186, 230, 28, 20), (4.0, 0.0), 0),
                ObjectSpec(BoundingBox(426, 230, 28, 20), (-4.0, 0.0), 1),
            ),
            noise_sigma=0.02,
            occlusion_iou=0.9,
            seed=102,
        )
    elif key == "REENTRY":
        # object 2 leaves through the right edge and is steered back in
        cfg = SceneConfig(
            width=640,
            height=480,
            frame_count=60,
            objects=(
                ObjectSpec(BoundingBox(100, 320, 28, 20), (1.0, 0.0), 2),
                ObjectSpec(
                    BoundingBox(480, 140, 28, 20),
                    (10.0, 0.0),
                    3,
                    velocity_changes=((26, -10.0, 0.0),),
                ),
            ),
            noise_sigma=0.02,
            seed=103,
        )
    elif key == "CLUTTER":
        cfg = SceneConfig(
            width=640,
            height=480,
            frame_count=60,
            objects=(
                ObjectSpec(BoundingBox(60, 80, 28, 20), (2.0, 0.5), 0),
                ObjectSpec(BoundingBox(520, 120, 26, 22), (-2.0, 1.0), 1),
                ObjectSpec(BoundingBox(120, 360, 30, 18), (2.5, -1.0), 2),
                ObjectSpec(BoundingBox(480, 380, 24, 20), (-1.5, -1.5), 3),
            ),
            noise_sigma=0.03,
            miss_prob=0.1,
            fp_rate=0.5,
            water_regions=(
                BoundingBox(200, 20, 240, 60),
                BoundingBox(40, 430, 560, 44),
            ),
            seed=104,
        )
    else:
        raise ValueError(f"unknown preset {name!r} (choose from {', '.join(PRESET_NAMES)})")
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg
