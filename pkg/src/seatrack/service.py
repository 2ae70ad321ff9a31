"""HTTP backend for the annotation tool.

Serves frames and editable per-frame box lists, proposes id assignments for a
frame by matching its candidate boxes against the previous frame on centroid
distance, applies human edits, and persists the annotations file atomically.
The in-memory session is the single source of truth until save; requests that
mutate it are serialized behind one lock.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .core import (
    BoundingBox,
    Detection,
    GroundTruthBox,
    SequenceManifest,
    centroid_distance,
    read_annotations,
    read_detections,
    read_manifest,
    write_annotations,
)
from .imaging import load_image, to_png_bytes
from .tracker import hungarian_assign


class ApiError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class AnnotationSession:
    """Editable per-frame boxes plus bookkeeping for fresh ids."""

    manifest: SequenceManifest
    annotations_path: str
    frames: dict[int, list[GroundTruthBox]] = field(default_factory=dict)
    detections: dict[int, list[Detection]] = field(default_factory=dict)
    preassign_gate: float = 50.0
    next_fresh_id: int = 1
    dirty: bool = False

    @classmethod
    def open(
        cls,
        manifest_path: str,
        annotations_path: str,
        detections_path: str | None = None,
        preassign_gate: float = 50.0,
    ) -> "AnnotationSession":
        manifest = read_manifest(manifest_path)
        session = cls(manifest, annotations_path, preassign_gate=preassign_gate)
        if os.path.exists(annotations_path):
            for box in read_annotations(annotations_path):
                session.frames.setdefault(box.frame_id, []).append(box)
        if detections_path:
            for det in read_detections(detections_path):
                session.detections.setdefault(det.frame_id, []).append(det)
        session._bump_fresh_id()
        return session

    def _bump_fresh_id(self) -> None:
        ids = [b.object_id for boxes in self.frames.values() for b in boxes]
        self.next_fresh_id = max(ids, default=0) + 1

    def _check_frame(self, frame_id: int) -> None:
        if not 0 <= frame_id < self.manifest.frame_count:
            raise ApiError(404, f"frame {frame_id} out of range")

    def frame_boxes(self, frame_id: int) -> list[GroundTruthBox]:
        self._check_frame(frame_id)
        return sorted(self.frames.get(frame_id, []), key=lambda b: b.object_id)

    def put_frame_boxes(self, frame_id: int, boxes: list[GroundTruthBox]) -> None:
        self._check_frame(frame_id)
        ids = [b.object_id for b in boxes]
        if len(ids) != len(set(ids)):
            raise ApiError(409, f"duplicate box ids in frame {frame_id}")
        self.frames[frame_id] = list(boxes)
        self.dirty = True
        self._bump_fresh_id()

    def delete_box(self, frame_id: int, object_id: int) -> None:
        self._check_frame(frame_id)
        boxes = self.frames.get(frame_id, [])
        kept = [b for b in boxes if b.object_id != object_id]
        if len(kept) == len(boxes):
            raise ApiError(404, f"no box with id {object_id} in frame {frame_id}")
        self.frames[frame_id] = kept
        self.dirty = True

    def set_box_id(self, frame_id: int, object_id: int, new_id: int) -> None:
        self._check_frame(frame_id)
        if new_id <= 0:
            raise ApiError(400, "box id must be a positive integer")
        boxes = self.frames.get(frame_id, [])
        if not any(b.object_id == object_id for b in boxes):
            raise ApiError(404, f"no box with id {object_id} in frame {frame_id}")
        if new_id != object_id and any(b.object_id == new_id for b in boxes):
            raise ApiError(409, f"id {new_id} already used in frame {frame_id}")
        self.frames[frame_id] = [
            GroundTruthBox(frame_id, new_id, b.box) if b.object_id == object_id else b
            for b in boxes
        ]
        self.dirty = True
        self._bump_fresh_id()

    def preassign(self, frame_id: int) -> list[GroundTruthBox]:
        """Propose ids for frame's candidate boxes from the previous frame.

        Matched candidates inherit the previous box's id; the rest get fresh
        ids. The proposal is returned, never committed.
        """
        self._check_frame(frame_id)
        if frame_id < 1:
            raise ApiError(400, "frame 0 has no previous frame to assign from")
        previous = self.frame_boxes(frame_id - 1)
        candidates = [b.box for b in self.frames.get(frame_id, [])]
        if not candidates:
            candidates = [d.box for d in self.detections.get(frame_id, [])]
        if not candidates:
            return []
        if previous:
            cost = np.array(
                [[centroid_distance(p.box, c) for c in candidates] for p in previous]
            )
            matches, _, unmatched = hungarian_assign(cost, self.preassign_gate)
        else:
            matches, unmatched = [], list(range(len(candidates)))
        proposal: list[tuple[int, BoundingBox]] = []
        for r, c in matches:
            proposal.append((previous[r].object_id, candidates[c]))
        fresh = self.next_fresh_id
        used = {pid for pid, _ in proposal}
        for c in unmatched:
            while fresh in used:
                fresh += 1
            used.add(fresh)
            proposal.append((fresh, candidates[c]))
            fresh += 1
        proposal.sort(key=lambda ib: ib[0])
        return [GroundTruthBox(frame_id, oid, box) for oid, box in proposal]

    def save(self) -> None:
        boxes = [b for frame in sorted(self.frames) for b in self.frames[frame]]
        write_annotations(self.annotations_path, boxes, sequence=self.manifest.name)
        self.dirty = False


def _box_payload(b: GroundTruthBox) -> dict:
    return {"id": b.object_id, "x": b.box.x, "y": b.box.y, "w": b.box.w, "h": b.box.h}


def _parse_boxes(frame_id: int, payload, where: str) -> list[GroundTruthBox]:
    if not isinstance(payload, dict) or not isinstance(payload.get("boxes"), list):
        raise ApiError(400, f"{where}: body must be {{'boxes': [...]}}")
    out = []
    for rec in payload["boxes"]:
        try:
            out.append(
                GroundTruthBox(
                    frame_id,
                    int(rec["id"]),
                    BoundingBox(float(rec["x"]), float(rec["y"]),
                                float(rec["w"]), float(rec["h"])),
                )
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ApiError(400, f"{where}: bad box record: {e}")
    return out


def create_app(session: AnnotationSession, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="seatrack annotation service")
    lock = threading.Lock()

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse({"error": exc.message}, status_code=exc.status)

    @app.get("/api/sequence")
    def sequence():
        m = session.manifest
        return {
            "name": m.name,
            "frame_count": m.frame_count,
            "image_width": m.image_width,
            "image_height": m.image_height,
            "dirty": session.dirty,
        }

    @app.get("/api/frames/{frame_id}")
    def get_frame(frame_id: int):
        with lock:
            boxes = session.frame_boxes(frame_id)
        return {"frame_id": frame_id, "boxes": [_box_payload(b) for b in boxes]}

    @app.get("/api/frames/{frame_id}/image")
    def get_image(frame_id: int):
        session._check_frame(frame_id)
        image = load_image(session.manifest.frame_path(frame_id))
        return Response(content=to_png_bytes(image), media_type="image/png")

    @app.post("/api/frames/{frame_id}/preassign")
    def preassign(frame_id: int):
        with lock:
            proposal = session.preassign(frame_id)
        return {"frame_id": frame_id, "boxes": [_box_payload(b) for b in proposal]}

    @app.put("/api/frames/{frame_id}")
    async def put_frame(frame_id: int, request: Request):
        payload = await request.json()
        boxes = _parse_boxes(frame_id, payload, f"frame {frame_id}")
        with lock:
            session.put_frame_boxes(frame_id, boxes)
        return {"frame_id": frame_id, "boxes": [_box_payload(b) for b in boxes]}

    @app.patch("/api/frames/{frame_id}/boxes/{object_id}")
    async def patch_box(frame_id: int, object_id: int, request: Request):
        payload = await request.json()
        if not isinstance(payload, dict) or "new_id" not in payload:
            raise ApiError(400, "body must be {'new_id': n}")
        try:
            new_id = int(payload["new_id"])
        except (TypeError, ValueError):
            raise ApiError(400, "new_id must be an integer")
        with lock:
            session.set_box_id(frame_id, object_id, new_id)
        return {"frame_id": frame_id, "id": new_id}

    @app.delete("/api/frames/{frame_id}/boxes/{object_id}")
    def delete_box(frame_id: int, object_id: int):
        with lock:
            session.delete_box(frame_id, object_id)
        return {"frame_id": frame_id, "deleted": object_id}

    @app.post("/api/save")
    def save():
        with lock:
            session.save()
        return {"saved": session.annotations_path}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def serve(
    manifest_path: str,
    annotations_path: str,
    port: int,
    detections_path: str | None = None,
    ui_dir: str | None = None,
    preassign_gate: float = 50.0,
) -> None:
    """Run the service until interrupted; startup problems raise immediately."""
    import uvicorn

    session = AnnotationSession.open(
        manifest_path, annotations_path, detections_path, preassign_gate
    )
    app = create_app(session, ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
