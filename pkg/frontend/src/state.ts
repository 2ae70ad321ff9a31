import { ApiClient } from "./api.js";
import type { Box, SequenceInfo } from "./types.js";

export interface UiState {
  frameIndex: number;
  sequence: SequenceInfo | null;
  /** Boxes of frame i-1, or null when on the first frame. */
  prevBoxes: Box[] | null;
  /** Committed boxes of the current frame (mirror of the service). */
  boxes: Box[];
  selectedId: number | null;
  /** Pre-assignment proposal overlay; held locally until accepted. */
  proposal: Box[] | null;
  /** Service session has edits not yet saved to disk. */
  dirty: boolean;
  error: string | null;
}

export type ConfirmFn = (message: string) => boolean;

/**
 * Drives the annotation screen. The controller never owns annotation data:
 * every committed change is a service call followed by a re-fetch, so what
 * the screen shows is always what the service holds.
 */
export class AnnotationController {
  state: UiState = {
    frameIndex: 0,
    sequence: null,
    prevBoxes: null,
    boxes: [],
    selectedId: null,
    proposal: null,
    dirty: false,
    error: null,
  };

  onChange: (state: UiState) => void = () => {};

  constructor(
    private api: ApiClient,
    private confirm: ConfirmFn = () => true,
  ) {}

  private emit(): void {
    this.onChange(this.state);
  }

  private fail(err: unknown): void {
    this.state.error = err instanceof Error ? err.message : String(err);
    this.emit();
  }

  async load(): Promise<void> {
    try {
      this.state.sequence = await this.api.sequence();
      this.state.dirty = this.state.sequence.dirty;
      await this.fetchFrame(0);
    } catch (err) {
      this.fail(err);
    }
  }

  /** Re-fetch the current and previous frame from the service. */
  async refresh(): Promise<void> {
    await this.fetchFrame(this.state.frameIndex, { keepSelection: true });
  }

  private async fetchFrame(
    index: number,
    opts: { keepSelection?: boolean } = {},
  ): Promise<void> {
    const current = await this.api.frame(index);
    const previous = index > 0 ? await this.api.frame(index - 1) : null;
    const selected = this.state.selectedId;
    this.state.frameIndex = index;
    this.state.boxes = current.boxes;
    this.state.prevBoxes = previous ? previous.boxes : null;
    this.state.selectedId =
      opts.keepSelection && selected !== null && current.boxes.some((b) => b.id === selected)
        ? selected
        : null;
    this.state.proposal = null;
    this.state.error = null;
    this.emit();
  }

  private async syncDirty(): Promise<void> {
    try {
      const info = await this.api.sequence();
      this.state.sequence = info;
      this.state.dirty = info.dirty;
    } catch {
      /* dirty indicator is cosmetic; keep the last known value */
    }
  }

  async goTo(index: number): Promise<void> {
    const seq = this.state.sequence;
    if (!seq || index < 0 || index >= seq.frame_count) return;
    if (this.state.proposal !== null && !this.confirm("Discard the unaccepted proposal?")) {
      return;
    }
    if (this.state.dirty && !this.confirm("The session has unsaved changes. Move on anyway?")) {
      return;
    }
    try {
      await this.fetchFrame(index);
    } catch (err) {
      this.fail(err);
    }
  }

  next(): Promise<void> {
    return this.goTo(this.state.frameIndex + 1);
  }

  prev(): Promise<void> {
    return this.goTo(this.state.frameIndex - 1);
  }

  select(id: number | null): void {
    this.state.selectedId = id;
    this.emit();
  }

  /** Hit-test: smallest box under the point wins, then lowest id. */
  selectAt(x: number, y: number): number | null {
    const hits = this.state.boxes
      .filter((b) => x >= b.x && x <= b.x + b.w && y >= b.y && y <= b.y + b.h)
      .sort((a, b) => a.w * a.h - b.w * b.h || a.id - b.id);
    this.select(hits.length ? hits[0].id : null);
    return this.state.selectedId;
  }

  /** Lowest positive id unused in the current frame, for a freshly drawn box. */
  freshId(): number {
    const used = new Set(this.state.boxes.map((b) => b.id));
    let id = 1;
    while (used.has(id)) id += 1;
    return id;
  }

  async editSelectedId(newId: number): Promise<void> {
    const id = this.state.selectedId;
    if (id === null) return;
    if (!Number.isInteger(newId) || newId <= 0) {
      this.state.error = "box id must be a positive integer";
      this.emit();
      return;
    }
    if (newId === id) return;
    try {
      await this.api.setBoxId(this.state.frameIndex, id, newId);
      this.state.selectedId = newId;
      await this.fetchFrame(this.state.frameIndex, { keepSelection: true });
      await this.syncDirty();
      this.emit();
    } catch (err) {
      // conflict (or any service rejection): surface it, keep the old id
      this.fail(err);
    }
  }

  async drawBox(x: number, y: number, w: number, h: number, id?: number): Promise<void> {
    if (w < 1 || h < 1) return;
    const box: Box = { id: id ?? this.freshId(), x, y, w, h };
    try {
      await this.api.putFrame(this.state.frameIndex, [...this.state.boxes, box]);
      this.state.selectedId = box.id;
      await this.fetchFrame(this.state.frameIndex, { keepSelection: true });
      await this.syncDirty();
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  async deleteSelected(): Promise<void> {
    const id = this.state.selectedId;
    if (id === null) return;
    try {
      await this.api.deleteBox(this.state.frameIndex, id);
      this.state.selectedId = null;
      await this.fetchFrame(this.state.frameIndex);
      await this.syncDirty();
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  async requestPreassign(): Promise<void> {
    try {
      const payload = await this.api.preassign(this.state.frameIndex);
      this.state.proposal = payload.boxes;
      this.state.error = null;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Commit the proposal verbatim: the PUT body is exactly the overlay. */
  async acceptProposal(): Promise<void> {
    const proposal = this.state.proposal;
    if (!proposal) return;
    try {
      await this.api.putFrame(this.state.frameIndex, proposal);
      this.state.proposal = null;
      await this.fetchFrame(this.state.frameIndex);
      await this.syncDirty();
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }

  dismissProposal(): void {
    this.state.proposal = null;
    this.emit();
  }

  async saveAll(): Promise<void> {
    try {
      await this.api.save();
      await this.syncDirty();
      this.state.error = null;
      this.emit();
    } catch (err) {
      this.fail(err);
    }
  }
}
