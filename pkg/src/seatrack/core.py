"""Shared geometric types, distance primitives, and detection/annotation file I/O."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field


class FormatError(ValueError):
    """Raised when an input file is malformed; the message names the location."""


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates: top-left corner plus size."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not math.isfinite(v):
                raise ValueError(f"bounding box field {name!r} is not finite: {v}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"bounding box needs positive size, got w={self.w}, h={self.h}")

    @property
    def cx(self) -> float:
        return self.x + self.w / 2

    @property
    def cy(self) -> float:
        return self.y + self.h / 2

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.x, self.y, self.w, self.h


@dataclass(frozen=True)
class Detection:
    """One detector output box on a frame, without identity."""

    frame_id: int
    box: BoundingBox
    confidence: float = 1.0
    class_label: int = 0

    def __post_init__(self):
        object.__setattr__(self, "confidence", float(self.confidence))
        if self.frame_id < 0:
            raise ValueError(f"frame_id must be non-negative, got {self.frame_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0,1], got {self.confidence}")


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated box carrying a persistent object identity."""

    frame_id: int
    object_id: int
    box: BoundingBox

    def __post_init__(self):
        if self.frame_id < 0:
            raise ValueError(f"frame_id must be non-negative, got {self.frame_id}")
        if self.object_id <= 0:
            raise ValueError(f"object_id must be positive, got {self.object_id}")


@dataclass(frozen=True)
class SequenceManifest:
    """Describes an image sequence on disk.

    ``image_path_pattern`` is a ``str.format`` template taking the frame index,
    resolved relative to ``root`` (the manifest file's directory after loading).
    """

    name: str
    frame_count: int
    image_width: int
    image_height: int
    image_path_pattern: str
    root: str = "."

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be positive")

    def frame_path(self, frame_id: int) -> str:
        return os.path.join(self.root, self.image_path_pattern.format(frame_id))

    @property
    def diagonal(self) -> float:
        return math.hypot(self.image_width, self.image_height)


def centroid_distance(a: BoundingBox, b: BoundingBox) -> float:
    """Euclidean distance between box centers, in pixels."""
    return math.hypot(a.cx - b.cx, a.cy - b.cy)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write a file atomically: temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _parse_field(raw: str, lineno: int, name: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise FormatError(f"line {lineno}: field {name!r}: cannot parse {raw!r}") from None


_DET_FIELDS = ("frame_id", "x", "y", "w", "h", "confidence", "class_label")


def read_detections(path: str) -> list[Detection]:
    """Read a detections file: one `frame_id,x,y,w,h,confidence,class_label` per line."""
    detections = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise FormatError(
                    f"line {lineno}: expected 7 comma-separated fields, got {len(parts)}"
                )
            frame_id = _parse_field(parts[0], lineno, "frame_id", int)
            x = _parse_field(parts[1], lineno, "x", float)
            y = _parse_field(parts[2], lineno, "y", float)
            w = _parse_field(parts[3], lineno, "w", float)
            h = _parse_field(parts[4], lineno, "h", float)
            conf = _parse_field(parts[5], lineno, "confidence", float)
            label = _parse_field(parts[6], lineno, "class_label", int)
            if w <= 0 or h <= 0:
                raise FormatError(f"line {lineno}: field 'w'/'h': box size must be positive")
            try:
                detections.append(
                    Detection(frame_id, BoundingBox(x, y, w, h), conf, label)
                )
            except ValueError as e:
                raise FormatError(f"line {lineno}: {e}") from None
    return detections


def write_detections(path: str, detections: list[Detection]) -> None:
    lines = [
        f"{d.frame_id},{d.box.x!r},{d.box.y!r},{d.box.w!r},{d.box.h!r},"
        f"{d.confidence!r},{d.class_label}\n"
        for d in detections
    ]
    atomic_write_text(path, "".join(lines))


def _box_from_record(rec: dict, where: str) -> tuple[int, BoundingBox]:
    for key in ("id", "x", "y", "w", "h"):
        if key not in rec:
            raise FormatError(f"{where}: missing field {key!r}")
    if rec["w"] <= 0 or rec["h"] <= 0:
        raise FormatError(f"{where}: field 'w'/'h': box size must be positive")
    try:
        return int(rec["id"]), BoundingBox(
            float(rec["x"]), float(rec["y"]), float(rec["w"]), float(rec["h"])
        )
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None


def read_annotations(path: str) -> list[GroundTruthBox]:
    """Read an annotations JSON file into a flat, frame-ordered box list."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict) or "frames" not in doc:
        raise FormatError(f"{path}: expected an object with a 'frames' list")
    boxes = []
    for frame in doc["frames"]:
        frame_id = frame.get("frame_id")
        if not isinstance(frame_id, int) or frame_id < 0:
            raise FormatError(f"{path}: bad frame_id {frame_id!r}")
        seen = set()
        for rec in frame.get("boxes", []):
            where = f"{path}: frame {frame_id}"
            object_id, box = _box_from_record(rec, where)
            if object_id in seen:
                raise FormatError(f"{where}: duplicate object id {object_id}")
            seen.add(object_id)
            boxes.append(GroundTruthBox(frame_id, object_id, box))
    return boxes


def annotations_document(boxes: list[GroundTruthBox], sequence: str = "") -> dict:
    """Group boxes into the canonical frames/boxes JSON structure."""
    by_frame: dict[int, list[GroundTruthBox]] = {}
    for b in boxes:
        by_frame.setdefault(b.frame_id, []).append(b)
    frames = []
    for frame_id in sorted(by_frame):
        frames.append(
            {
                "frame_id": frame_id,
                "boxes": [
                    {"id": b.object_id, "x": b.box.x, "y": b.box.y, "w": b.box.w, "h": b.box.h}
                    for b in sorted(by_frame[frame_id], key=lambda b: b.object_id)
                ],
            }
        )
    return {"sequence": sequence, "frames": frames}


def write_annotations(path: str, boxes: list[GroundTruthBox], sequence: str = "") -> None:
    """Write annotations JSON atomically, in canonical frame/id order."""
    doc = annotations_document(boxes, sequence)
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def read_manifest(path: str) -> SequenceManifest:
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"{path}: invalid JSON: {e}") from None
    for key in ("name", "frame_count", "image_width", "image_height", "image_path_pattern"):
        if key not in doc:
            raise FormatError(f"{path}: missing manifest field {key!r}")
    try:
        return SequenceManifest(
            name=str(doc["name"]),
            frame_count=int(doc["frame_count"]),
            image_width=int(doc["image_width"]),
            image_height=int(doc["image_height"]),
            image_path_pattern=str(doc["image_path_pattern"]),
            root=os.path.dirname(os.path.abspath(path)),
        )
    except ValueError as e:
        raise FormatError(f"{path}: {e}") from None


def write_manifest(path: str, manifest: SequenceManifest) -> None:
    doc = {
        "name": manifest.name,
        "frame_count": manifest.frame_count,
        "image_width": manifest.image_width,
        "image_height": manifest.image_height,
        "image_path_pattern": manifest.image_path_pattern,
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def validate_manifest(manifest: SequenceManifest) -> None:
    """Check that every referenced frame exists and matches the declared size."""
    from .imaging import image_size

    for i in range(manifest.frame_count):
        p = manifest.frame_path(i)
        if not os.path.exists(p):
            raise FileNotFoundError(f"manifest {manifest.name!r}: missing frame image {p}")
        w, h = image_size(p)
        if (w, h) != (manifest.image_width, manifest.image_height):
            raise FormatError(
                f"manifest {manifest.name!r}: frame {i} is {w}x{h}, "
                f"declared {manifest.image_width}x{manifest.image_height}"
            )
