import json
import os

import pytest
from fastapi.testclient import TestClient

from seatrack.core import BoundingBox, read_annotations, write_annotations, write_detections
from seatrack.core import Detection, GroundTruthBox
from seatrack.service import AnnotationSession, create_app
from seatrack.synth import ObjectSpec, SceneConfig, generate, write_scene


@pytest.fixture()
def workspace(tmp_path):
    cfg = SceneConfig(
        width=96,
        height=72,
        frame_count=4,
        objects=(
            ObjectSpec(BoundingBox(10, 12, 16, 12), (2.0, 0.0), 0),
            ObjectSpec(BoundingBox(60, 40, 16, 12), (-2.0, 0.0), 1),
        ),
        noise_sigma=0.0,
        det_jitter=0.5,
        seed=31,
    )
    scene = generate(cfg)
    root = str(tmp_path / "seq")
    write_scene(scene, root, "svc")
    return root, scene


def _client(root, annotations_name="work.json", with_detections=True):
    session = AnnotationSession.open(
        os.path.join(root, "manifest.json"),
        os.path.join(root, annotations_name),
        os.path.join(root, "detections.csv") if with_detections else None,
        preassign_gate=25.0,
    )
    return TestClient(create_app(session)), session


def test_sequence_summary(workspace):
    root, _ = workspace
    client, _ = _client(root)
    r = client.get("/api/sequence")
    assert r.status_code == 200
    body = r.json()
    assert body["frame_count"] == 4
    assert body["image_width"] == 96


def test_frames_empty_and_out_of_range(workspace):
    root, _ = workspace
    client, _ = _client(root)
    r = client.get("/api/frames/0")
    assert r.status_code == 200
    assert r.json() == {"frame_id": 0, "boxes": []}
    r = client.get("/api/frames/4")
    assert r.status_code == 404
    assert "error" in r.json()


def test_frame_image_is_png(workspace):
    root, _ = workspace
    client, _ = _client(root)
    r = client.get("/api/frames/1/image")
    assert r.status_code == 200
    assert r.headers["content-type"] == "image/png"
    assert r.content[:8] == b"\x89PNG\r\n\x1a\n"


def test_put_get_delete_roundtrip(workspace):
    root, _ = workspace
    client, _ = _client(root)
    boxes = {"boxes": [
        {"id": 1, "x": 10.0, "y": 12.0, "w": 16.0, "h": 12.0},
        {"id": 2, "x": 60.0, "y": 40.0, "w": 16.0, "h": 12.0},
    ]}
    r = client.put("/api/frames/0", json=boxes)
    assert r.status_code == 200
    assert client.get("/api/frames/0").json()["boxes"] == boxes["boxes"]
    r = client.delete("/api/frames/0/boxes/2")
    assert r.status_code == 200
    remaining = client.get("/api/frames/0").json()["boxes"]
    assert [b["id"] for b in remaining] == [1]
    assert client.delete("/api/frames/0/boxes/99").status_code == 404


def test_put_rejects_duplicate_ids(workspace):
    root, _ = workspace
    client, _ = _client(root)
    boxes = {"boxes": [
        {"id": 1, "x": 1, "y": 1, "w": 5, "h": 5},
        {"id": 1, "x": 20, "y": 20, "w": 5, "h": 5},
    ]}
    r = client.put("/api/frames/0", json=boxes)
    assert r.status_code == 409
    assert client.get("/api/frames/0").json()["boxes"] == []


def test_set_box_id_conflict_leaves_session_unchanged(workspace):
    root, _ = workspace
    client, _ = _client(root)
    client.put("/api/frames/0", json={"boxes": [
        {"id": 1, "x": 1, "y": 1, "w": 5, "h": 5},
        {"id": 2, "x": 20, "y": 20, "w": 5, "h": 5},
    ]})
    r = client.patch("/api/frames/0/boxes/1", json={"new_id": 2})
    assert r.status_code == 409
    ids = [b["id"] for b in client.get("/api/frames/0").json()["boxes"]]
    assert ids == [1, 2]
    r = client.patch("/api/frames/0/boxes/1", json={"new_id": 7})
    assert r.status_code == 200
    ids = [b["id"] for b in client.get("/api/frames/0").json()["boxes"]]
    assert ids == [2, 7]
    assert client.patch("/api/frames/0/boxes/42", json={"new_id": 50}).status_code == 404


def test_preassign_inherits_ids_and_is_pure(workspace):
    root, scene = workspace
    client, _ = _client(root)
    frame0 = [
        {"id": 5, "x": b.box.x, "y": b.box.y, "w": b.box.w, "h": b.box.h}
        if b.object_id == 1
        else {"id": 9, "x": b.box.x, "y": b.box.y, "w": b.box.w, "h": b.box.h}
        for b in scene.ground_truth
        if b.frame_id == 0
    ]
    client.put("/api/frames/0", json={"boxes": frame0})
    r1 = client.post("/api/frames/1/preassign")
    assert r1.status_code == 200
    proposal = r1.json()["boxes"]
    # detections for frame 1 are within a few px of frame 0 boxes: ids inherited
    assert sorted(b["id"] for b in proposal) == [5, 9]
    r2 = client.post("/api/frames/1/preassign")
    assert r2.json() == r1.json()
    assert client.post("/api/frames/0/preassign").status_code == 400


def test_preassign_gives_fresh_id_to_far_box(workspace):
    root, scene = workspace
    client, _ = _client(root)
    frame0 = [
        {"id": b.object_id, "x": b.box.x, "y": b.box.y, "w": b.box.w, "h": b.box.h}
        for b in scene.ground_truth
        if b.frame_id == 0
    ]
    client.put("/api/frames/0", json={"boxes": frame0})
    # stage frame 1 with one matching box and one far-away new box
    near = frame0[0]
    client.put("/api/frames/1", json={"boxes": [
        {"id": 100, "x": near["x"] + 2, "y": near["y"], "w": near["w"], "h": near["h"]},
        {"id": 101, "x": 2.0, "y": 55.0, "w": 10.0, "h": 10.0},
    ]})
    proposal = client.post("/api/frames/1/preassign").json()["boxes"]
    ids = sorted(b["id"] for b in proposal)
    assert ids[0] == near["id"]  # inherited
    assert ids[1] > max(b["id"] for b in frame0 + proposal[:0]) or ids[1] >= 101


def test_preassign_empty_previous_frame_all_fresh(workspace):
    root, _ = workspace
    client, _ = _client(root)
    proposal = client.post("/api/frames/1/preassign").json()["boxes"]
    assert len(proposal) == 2  # from the detections file
    assert len({b["id"] for b in proposal}) == 2


def test_save_is_atomic_and_reloadable(workspace):
    root, _ = workspace
    client, session = _client(root)
    client.put("/api/frames/2", json={"boxes": [
        {"id": 3, "x": 4.0, "y": 5.0, "w": 6.0, "h": 7.0},
    ]})
    assert client.get("/api/sequence").json()["dirty"] is True
    r = client.post("/api/save")
    assert r.status_code == 200
    assert client.get("/api/sequence").json()["dirty"] is False
    loaded = read_annotations(session.annotations_path)
    assert loaded == [GroundTruthBox(2, 3, BoundingBox(4, 5, 6, 7))]
    # saving again produces byte-identical content
    first = open(session.annotations_path, "rb").read()
    client.post("/api/save")
    assert open(session.annotations_path, "rb").read() == first


def test_session_reopens_existing_annotations(workspace):
    root, _ = workspace
    path = os.path.join(root, "existing.json")
    write_annotations(path, [GroundTruthBox(1, 4, BoundingBox(5, 5, 8, 8))], "svc")
    client, session = _client(root, annotations_name="existing.json")
    boxes = client.get("/api/frames/1").json()["boxes"]
    assert boxes == [{"id": 4, "x": 5.0, "y": 5.0, "w": 8.0, "h": 8.0}]
    assert session.next_fresh_id == 5


def test_serves_ui_bundle_when_present(workspace, tmp_path):
    root, _ = workspace
    ui = tmp_path / "ui"
    ui.mkdir()
    (ui / "index.html").write_text("<!doctype html><title>annotate</title>")
    session = AnnotationSession.open(
        os.path.join(root, "manifest.json"), os.path.join(root, "ui-work.json")
    )
    client = TestClient(create_app(session, ui_dir=str(ui)))
    r = client.get("/")
    assert r.status_code == 200
    assert "annotate" in r.text
    # API routes still take precedence over the static mount
    assert client.get("/api/sequence").status_code == 200
