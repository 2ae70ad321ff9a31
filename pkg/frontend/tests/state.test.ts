import { beforeEach, describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { AnnotationController } from "../src/state.js";
import { FakeService } from "./fake_service.js";
import type { Box } from "../src/types.js";

function box(id: number, x: number, y: number, w = 20, h = 16): Box {
  return { id, x, y, w, h };
}

/** Four well-separated objects on frame 0; frame 1 has detections only. */
function clutterLike(): FakeService {
  return new FakeService({
    name: "clutter",
    frameCount: 3,
    frames: {
      0: [box(1, 60, 80), box(2, 520, 120), box(3, 120, 360), box(4, 480, 380)],
    },
    detections: {
      1: [
        { id: 0, x: 62, y: 81, w: 20, h: 16 },
        { id: 0, x: 518, y: 121, w: 20, h: 16 },
        { id: 0, x: 122, y: 359, w: 20, h: 16 },
        { id: 0, x: 479, y: 378, w: 20, h: 16 },
      ],
    },
  });
}

function controllerFor(service: FakeService, confirm: (m: string) => boolean = () => true) {
  return new AnnotationController(new ApiClient("", service.fetch), confirm);
}

describe("loading and navigation", () => {
  let service: FakeService;
  let ctl: AnnotationController;

  beforeEach(async () => {
    service = clutterLike();
    ctl = controllerFor(service);
    await ctl.load();
  });

  it("starts on frame 0 with no previous frame", () => {
    expect(ctl.state.frameIndex).toBe(0);
    expect(ctl.state.prevBoxes).toBeNull();
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([1, 2, 3, 4]);
  });

  it("navigating forward shows the committed previous frame", async () => {
    await ctl.next();
    expect(ctl.state.frameIndex).toBe(1);
    expect(ctl.state.prevBoxes?.map((b) => b.id)).toEqual([1, 2, 3, 4]);
    expect(ctl.state.boxes).toEqual([]);
  });

  it("navigation is clamped to the sequence bounds", async () => {
    await ctl.prev();
    expect(ctl.state.frameIndex).toBe(0);
    await ctl.goTo(99);
    expect(ctl.state.frameIndex).toBe(0);
  });

  it("re-rendering after next+prev shows identical state", async () => {
    const before = JSON.stringify(ctl.state.boxes);
    await ctl.next();
    await ctl.prev();
    expect(JSON.stringify(ctl.state.boxes)).toBe(before);
    expect(ctl.state.selectedId).toBeNull();
  });

  it("guards navigation while a proposal is pending", async () => {
    const prompts: string[] = [];
    const guarded = controllerFor(service, (m) => {
      prompts.push(m);
      return false;
    });
    await guarded.load();
    await guarded.next();
    await guarded.requestPreassign();
    expect(guarded.state.proposal).not.toBeNull();
    await guarded.next();
    expect(guarded.state.frameIndex).toBe(1); // stayed put
    expect(prompts.length).toBe(1);
  });

  it("guards navigation while the session is unsaved", async () => {
    const prompts: string[] = [];
    const guarded = controllerFor(service, (m) => {
      prompts.push(m);
      return true;
    });
    await guarded.load();
    await guarded.drawBox(300, 300, 20, 16);
    expect(guarded.state.dirty).toBe(true);
    await guarded.next();
    expect(prompts.some((m) => /unsaved/.test(m))).toBe(true);
    expect(guarded.state.frameIndex).toBe(1); // confirmed, so it moved
  });
});

describe("selection and editing", () => {
  let service: FakeService;
  let ctl: AnnotationController;

  beforeEach(async () => {
    service = clutterLike();
    ctl = controllerFor(service);
    await ctl.load();
  });

  it("hit-tests boxes and empty space", () => {
    expect(ctl.selectAt(70, 88)).toBe(1);
    expect(ctl.selectAt(530, 130)).toBe(2);
    expect(ctl.selectAt(5, 5)).toBeNull();
  });

  it("edits an id through the service", async () => {
    ctl.select(1);
    await ctl.editSelectedId(9);
    expect(ctl.state.error).toBeNull();
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([2, 3, 4, 9]);
    expect(ctl.state.selectedId).toBe(9);
    expect(ctl.state.dirty).toBe(true);
  });

  it("duplicate id edits surface a conflict and keep the old id", async () => {
    ctl.select(1);
    await ctl.editSelectedId(2);
    expect(ctl.state.error).toMatch(/already used/);
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([1, 2, 3, 4]);
    expect(ctl.state.selectedId).toBe(1);
  });

  it("rejects non-positive ids locally", async () => {
    ctl.select(1);
    await ctl.editSelectedId(0);
    expect(ctl.state.error).toMatch(/positive/);
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([1, 2, 3, 4]);
  });

  it("draws a box with a fresh id and deletes the selection", async () => {
    expect(ctl.freshId()).toBe(5);
    await ctl.drawBox(300, 200, 24, 18);
    expect(ctl.state.boxes.map((b) => b.id)).toContain(5);
    expect(ctl.state.selectedId).toBe(5);
    await ctl.deleteSelected();
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([1, 2, 3, 4]);
    expect(ctl.state.selectedId).toBeNull();
  });

  it("failed mutations never change displayed boxes", async () => {
    const before = JSON.stringify(ctl.state.boxes);
    ctl.select(3);
    await ctl.editSelectedId(4); // conflict
    expect(JSON.stringify(ctl.state.boxes)).toBe(before);
    expect(ctl.state.error).not.toBeNull();
  });
});

describe("preassign and save", () => {
  it("proposal inherits previous ids and Accept PUTs it verbatim", async () => {
    const service = clutterLike();
    const ctl = controllerFor(service);
    await ctl.load();
    await ctl.next();
    await ctl.requestPreassign();
    const proposal = ctl.state.proposal!;
    expect(proposal.map((b) => b.id)).toEqual([1, 2, 3, 4]);
    await ctl.acceptProposal();
    const put = service.requests.filter((r) => r.method === "PUT").pop();
    expect(put?.body).toEqual({ boxes: proposal });
    expect(ctl.state.proposal).toBeNull();
    expect(ctl.state.boxes).toEqual(proposal);
  });

  it("save clears the dirty flag and persists the session", async () => {
    const service = clutterLike();
    const ctl = controllerFor(service);
    await ctl.load();
    await ctl.drawBox(200, 200, 10, 10);
    expect(ctl.state.dirty).toBe(true);
    await ctl.saveAll();
    expect(ctl.state.dirty).toBe(false);
    expect(service.disk).toContain('"frame_id": 0');
  });

  it("the UI only ever touches annotations through service endpoints", async () => {
    const service = clutterLike();
    const ctl = controllerFor(service);
    await ctl.load();
    await ctl.next();
    await ctl.requestPreassign();
    await ctl.acceptProposal();
    ctl.select(2);
    await ctl.editSelectedId(7);
    await ctl.deleteSelected();
    await ctl.saveAll();
    const mutations = service.requests.filter((r) =>
      ["PUT", "PATCH", "DELETE"].includes(r.method),
    );
    for (const m of mutations) {
      expect(m.url).toMatch(/^\/api\/frames\/\d+(\/boxes\/\d+)?$/);
    }
    // after save, a fresh GET of the frame equals what the UI displays
    const fresh = await new ApiClient("", service.fetch).frame(ctl.state.frameIndex);
    expect(fresh.boxes).toEqual(ctl.state.boxes);
  });
});

describe("acceptance criterion 10: scripted annotation session", () => {
  it("the saved file differs from the pre-session file by exactly the edits", async () => {
    const service = clutterLike();
    const preSession = JSON.parse(service.disk);
    const ctl = controllerFor(service);
    await ctl.load();

    // preassign frame 1 and accept the proposal
    await ctl.next();
    await ctl.requestPreassign();
    const proposal = ctl.state.proposal!.map((b) => ({ ...b }));
    await ctl.acceptProposal();

    // change one id: object 2 becomes 9
    ctl.select(2);
    await ctl.editSelectedId(9);

    // draw one new box
    const drawn = { id: ctl.freshId(), x: 300, y: 40, w: 22, h: 14 };
    await ctl.drawBox(drawn.x, drawn.y, drawn.w, drawn.h, drawn.id);

    // delete one box: object 3
    ctl.select(3);
    await ctl.deleteSelected();

    await ctl.saveAll();
    const postSession = JSON.parse(service.disk);

    // frame 0 is untouched
    expect(postSession.frames[0]).toEqual(preSession.frames[0]);

    // frame 1 is exactly: accepted proposal, with id 2 -> 9, minus id 3, plus the drawn box
    const expected = proposal
      .filter((b) => b.id !== 3)
      .map((b) => (b.id === 2 ? { ...b, id: 9 } : b))
      .concat([drawn])
      .sort((a, b) => a.id - b.id);
    expect(postSession.frames[1]).toEqual({ frame_id: 1, boxes: expected });
    expect(postSession.frames.length).toBe(2);
  });
});

describe("acceptance criterion 11: conflict surfacing", () => {
  it("a duplicate id shows an error and save changes nothing", async () => {
    const service = clutterLike();
    const before = service.disk;
    const ctl = controllerFor(service);
    await ctl.load();

    ctl.select(1);
    await ctl.editSelectedId(3); // id 3 already in the frame
    expect(ctl.state.error).toMatch(/already used/);
    expect(ctl.state.boxes.map((b) => b.id)).toEqual([1, 2, 3, 4]);

    await ctl.saveAll();
    expect(service.disk).toBe(before);
  });
});
