"""Per-frame association of detections to tracks and track lifecycle.

The association cost blends a motion term (centroid distance, normalized by
the image diagonal) with an appearance term (minimum embedding distance to
the track's gallery). Matching runs as a three-stage cascade:

  1. confirmed tracks  vs all detections   on the blended cost,
  2. lost tracks       vs what remains     on appearance only (restore),
  3. tentative tracks  vs what remains     on raw centroid distance,

each solved with a gated Hungarian assignment. Leftover detections spawn
tentative tracks; tentative tracks confirm after ``n_init`` consecutive hits
and die on their first miss; unmatched confirmed tracks become lost and are
forgotten once older than ``max_age``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import (
    BoundingBox,
    Detection,
    GroundTruthBox,
    SequenceManifest,
    centroid_distance,
    write_annotations,
)

SQ_EUCLIDEAN = "SQ_EUCLIDEAN"
COSINE = "COSINE"


class TrackState(Enum):
    TENTATIVE = "TENTATIVE"
    CONFIRMED = "CONFIRMED"
    LOST = "LOST"


@dataclass(frozen=True)
class TrackerConfig:
    lambda_weight: float = 0.5  # blend: motion share of the stage-1 cost
    cost_threshold: float = 0.4
    init_distance_threshold: float = 50.0
    n_init: int = 2
    max_age: int = 30
    budget: int = 30
    appearance_metric: str = SQ_EUCLIDEAN
    min_confidence: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_weight <= 1.0:
            raise ValueError(f"lambda_weight must be in [0,1], got {self.lambda_weight}")
        if self.max_age < 1 or self.budget < 1 or self.n_init < 1:
            raise ValueError("max_age, budget, and n_init must all be >= 1")
        if self.appearance_metric not in (SQ_EUCLIDEAN, COSINE):
            raise ValueError(f"unknown appearance metric {self.appearance_metric!r}")


@dataclass
class Track:
    track_id: int
    state: TrackState
    last_box: BoundingBox
    hits: int = 1
    time_since_update: int = 0
    gallery: list = field(default_factory=list)


@dataclass
class FrameResult:
    frame_id: int
    reported: list  # (track_id, BoundingBox, state name) for confirmed tracks
    created_ids: list
    removed_ids: list


def motion_cost(tracks: list[Track], detections: list[Detection], image_diag: float) -> np.ndarray:
    """Centroid distances over the image diagonal, clipped into [0, 1]."""
    if image_diag <= 0:
        raise ValueError("image_diag must be positive")
    if not tracks or not detections:
        return np.zeros((len(tracks), len(detections)))
    tc = np.array([(t.last_box.cx, t.last_box.cy) for t in tracks])
    dc = np.array([(d.box.cx, d.box.cy) for d in detections])
    dist = np.hypot(tc[:, 0:1] - dc[None, :, 0], tc[:, 1:2] - dc[None, :, 1])
    return np.minimum(dist / image_diag, 1.0)


def appearance_cost(tracks: list[Track], embeddings: np.ndarray, metric: str) -> np.ndarray:
    """Minimum gallery-to-detection embedding distance, scaled into [0, 1].

    SQ_EUCLIDEAN divides the squared distance by its range 4; COSINE maps
    (1 - dot) / 2. On unit vectors the two coincide exactly.
    """
    n_det = embeddings.shape[0] if embeddings.size else 0
    if n_det == 0 or not tracks:
        return np.zeros((len(tracks), n_det))
    sizes = []
    for t in tracks:
        if not t.gallery:
            raise ValueError(f"track {t.track_id} has an empty gallery")
        sizes.append(len(t.gallery))
    gallery = np.stack([vec for t in tracks for vec in t.gallery])
    dots = gallery @ embeddings.T
    if metric == COSINE:
        d = (1.0 - dots) / 2.0
    else:
        gn = np.einsum("ij,ij->i", gallery, gallery)
        en = np.einsum("ij,ij->i", embeddings, embeddings)
        d = (gn[:, None] + en[None, :] - 2.0 * dots) / 4.0
    offsets = np.concatenate(([0], np.cumsum(sizes[:-1]))).astype(np.int64)
    out = np.minimum.reduceat(d, offsets, axis=0)
    return np.clip(out, 0.0, 1.0)


def combined_cost(motion: np.ndarray, appearance: np.ndarray, lam: float) -> np.ndarray:
    """Entrywise blend lam * motion + (1 - lam) * appearance."""
    if motion.shape != appearance.shape:
        raise ValueError(f"shape mismatch: motion {motion.shape} vs appearance {appearance.shape}")
    return lam * motion + (1.0 - lam) * appearance


def _solve_square(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching on a square matrix (shortest augmenting
    paths with potentials, O(n^3)); returns the column assigned to each row."""
    n = cost.shape[0]
    u = np.zeros(n)  # row potentials
    v = np.zeros(n + 1)  # column potentials, index n is the virtual start column
    row_of = np.full(n + 1, -1, dtype=np.int64)  # matched row per column
    for i in range(n):
        row_of[n] = i
        j0 = n
        minv = np.full(n, np.inf)
        way = np.full(n, -1, dtype=np.int64)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used[:n]
            cur = cost[i0, free] - u[i0] - v[:n][free]
            idx = np.flatnonzero(free)
            better = cur < minv[idx]
            sel = idx[better]
            minv[sel] = cur[better]
            way[sel] = j0
            j1 = idx[np.argmin(minv[idx])]
            delta = minv[j1]
            used_cols = np.flatnonzero(used)
            u[row_of[used_cols]] += delta
            v[used_cols] -= delta
            minv[~used[:n]] -= delta
            j0 = j1
            if row_of[j0] == -1:
                break
        while j0 != n:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(n):
        if row_of[j] >= 0:
            col_of_row[row_of[j]] = j
    return col_of_row


def hungarian_assign(cost: np.ndarray, gate: float):
    """Optimal one-to-one assignment with gating.

    The rectangular matrix is padded square with 10x the gate so padding can
    never displace a gated real match; any match whose original entry exceeds
    the gate is dropped into the unmatched sets.

    Returns (matches, unmatched_rows, unmatched_cols), each sorted.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        rows, cols = cost.shape if cost.ndim == 2 else (0, 0)
        return [], list(range(rows)), list(range(cols))
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = cost.shape
    n = max(rows, cols)
    padded = np.full((n, n), 10.0 * gate)
    padded[:rows, :cols] = cost
    col_of_row = _solve_square(padded)
    matches = []
    unmatched_rows = []
    matched_cols = set()
    for r in range(rows):
        c = int(col_of_row[r])
        if c < cols and cost[r, c] <= gate:
            matches.append((r, c))
            matched_cols.add(c)
        else:
            unmatched_rows.append(r)
    unmatched_cols = [c for c in range(cols) if c not in matched_cols]
    return matches, unmatched_rows, unmatched_cols


class Tracker:
    """Mutable per-sequence tracking state; ``step`` is strictly sequential."""

    def __init__(self, config: TrackerConfig, image_size: tuple[int, int]):
        self.config = config
        self.image_diag = math.hypot(image_size[0], image_size[1])
        self.tracks: list[Track] = []
        self._next_id = 1

    def _spawn(self, det: Detection, embedding: np.ndarray) -> Track:
        t = Track(self._next_id, TrackState.TENTATIVE, det.box, hits=1,
                  time_since_update=0, gallery=[embedding])
        self._next_id += 1
        self.tracks.append(t)
        return t

    def step(self, frame_id: int, detections: list[Detection],
             embeddings: np.ndarray) -> FrameResult:
        cfg = self.config
        if len(detections) != (embeddings.shape[0] if embeddings.size else 0):
            raise ValueError(
                f"{len(detections)} detections but {embeddings.shape[0] if embeddings.size else 0} embeddings"
            )

        confirmed = [t for t in self.tracks if t.state is TrackState.CONFIRMED]
        lost = [t for t in self.tracks if t.state is TrackState.LOST]
        tentative = [t for t in self.tracks if t.state is TrackState.TENTATIVE]

        remaining = list(range(len(detections)))
        matched: list[tuple[Track, int]] = []

        # stage 1: confirmed tracks on the blended cost
        if confirmed and remaining:
            motion = motion_cost(confirmed, detections, self.image_diag)
            appear = appearance_cost(confirmed, embeddings, cfg.appearance_metric)
            cost = combined_cost(motion, appear, cfg.lambda_weight)
            ms, _, unmatched_cols = hungarian_assign(cost, cfg.cost_threshold)
            matched += [(confirmed[r], c) for r, c in ms]
            remaining = unmatched_cols

        # stage 2: lost tracks restored purely on appearance
        if lost and remaining:
            sub = [detections[j] for j in remaining]
            sub_emb = embeddings[remaining]
            appear = appearance_cost(lost, sub_emb, cfg.appearance_metric)
            ms, _, unmatched_cols = hungarian_assign(appear, cfg.cost_threshold)
            matched += [(lost[r], remaining[c]) for r, c in ms]
            remaining = [remaining[c] for c in unmatched_cols]

        # stage 3: tentative tracks on raw centroid distance
        if tentative and remaining:
            dist = np.zeros((len(tentative), len(remaining)))
            for i, t in enumerate(tentative):
                for jj, j in enumerate(remaining):
                    dist[i, jj] = centroid_distance(t.last_box, detections[j].box)
            ms, _, unmatched_cols = hungarian_assign(dist, cfg.init_distance_threshold)
            matched += [(tentative[r], remaining[c]) for r, c in ms]
            remaining = [remaining[c] for c in unmatched_cols]

        matched_tracks = {id(t) for t, _ in matched}
        removed_ids = []
        for t in self.tracks:
            if id(t) in matched_tracks:
                continue
            t.time_since_update += 1
            if t.state is TrackState.TENTATIVE:
                removed_ids.append(t.track_id)
            elif t.state is TrackState.CONFIRMED:
                t.state = TrackState.LOST
                t.hits = 0
                if t.time_since_update > cfg.max_age:
                    removed_ids.append(t.track_id)
            elif t.time_since_update > cfg.max_age:
                removed_ids.append(t.track_id)
        dead = set(removed_ids)
        self.tracks = [t for t in self.tracks if t.track_id not in dead]

        for t, j in matched:
            t.last_box = detections[j].box
            t.hits += 1
            t.time_since_update = 0
            t.gallery.append(embeddings[j])
            if len(t.gallery) > cfg.budget:
                t.gallery.pop(0)
            if t.state is TrackState.LOST:
                t.state = TrackState.CONFIRMED  # restoration re-confirms immediately
            elif t.state is TrackState.TENTATIVE and t.hits >= cfg.n_init:
                t.state = TrackState.CONFIRMED

        created_ids = []
        for j in remaining:
            t = self._spawn(detections[j], embeddings[j])
            created_ids.append(t.track_id)
            if cfg.n_init <= 1:
                t.state = TrackState.CONFIRMED

        reported = [
            (t.track_id, t.last_box, t.state.value)
            for t in self.tracks
            if t.state is TrackState.CONFIRMED
        ]
        reported.sort(key=lambda item: item[0])
        return FrameResult(frame_id, reported, created_ids, removed_ids)


def run_sequence(
    config: TrackerConfig,
    manifest: SequenceManifest,
    detections: list[Detection],
    net_cfg,
    weights,
    images: dict[int, np.ndarray] | None = None,
) -> tuple[list[GroundTruthBox], list[tuple[int, float]]]:
    """Track a whole sequence; returns (track boxes, per-frame timings in ms).

    Detections below ``min_confidence`` are dropped before embedding. Track
    output reuses the annotation schema with track ids as object ids.
    """
    from .embednet import forward_batch
    from .imaging import extract_patch, load_image

    by_frame: dict[int, list[Detection]] = {}
    for d in detections:
        if d.confidence >= config.min_confidence:
            by_frame.setdefault(d.frame_id, []).append(d)

    tracker = Tracker(config, (manifest.image_width, manifest.image_height))
    out_boxes: list[GroundTruthBox] = []
    timings: list[tuple[int, float]] = []
    for frame_id in range(manifest.frame_count):
        dets = by_frame.get(frame_id, [])
        if images is not None and frame_id in images:
            img = images[frame_id]
        else:
            img = load_image(manifest.frame_path(frame_id))
            if images is not None:
                images[frame_id] = img
        start = time.perf_counter()
        if dets:
            patches = np.stack(
                [extract_patch(img, d.box, net_cfg.patch_resolution) for d in dets]
            )
            embeddings, _ = forward_batch(net_cfg, weights, patches)
        else:
            embeddings = np.zeros((0, net_cfg.embedding_dim))
        result = tracker.step(frame_id, dets, embeddings)
        timings.append((frame_id, (time.perf_counter() - start) * 1000.0))
        for track_id, box, _ in result.reported:
            out_boxes.append(GroundTruthBox(frame_id, track_id, box))
    return out_boxes, timings


def write_track_output(path: str, boxes: list[GroundTruthBox], sequence: str) -> None:
    write_annotations(path, boxes, sequence=sequence)


def write_timings(path: str, timings: list[tuple[int, float]]) -> None:
    from .core import atomic_write_text

    lines = ["frame_id,step_ms\n"] + [f"{f},{ms:.3f}\n" for f, ms in timings]
    atomic_write_text(path, "".join(lines))
