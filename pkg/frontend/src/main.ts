import { ApiClient } from "./api.js";
import { AnnotationController } from "./state.js";
import { drawBoxes, drawPlaceholder, drawRubberBand } from "./render.js";

const api = new ApiClient("");
const controller = new AnnotationController(api, (msg) => window.confirm(msg));

const prevCanvas = document.getElementById("prev-canvas") as HTMLCanvasElement;
const curCanvas = document.getElementById("cur-canvas") as HTMLCanvasElement;
const frameLabel = document.getElementById("frame-label") as HTMLSpanElement;
const errorBanner = document.getElementById("error-banner") as HTMLDivElement;
const dirtyBadge = document.getElementById("dirty-badge") as HTMLSpanElement;
const idInput = document.getElementById("id-input") as HTMLInputElement;
const preassignBtn = document.getElementById("preassign-btn") as HTMLButtonElement;
const acceptBtn = document.getElementById("accept-btn") as HTMLButtonElement;
const dismissBtn = document.getElementById("dismiss-btn") as HTMLButtonElement;
const saveBtn = document.getElementById("save-btn") as HTMLButtonElement;

const images = new Map<number, HTMLImageElement>();
let drag: { x0: number; y0: number; x1: number; y1: number } | null = null;

function frameImage(index: number): HTMLImageElement {
  let img = images.get(index);
  if (!img) {
    img = new Image();
    img.src = api.imageUrl(index);
    img.onload = render;
    images.set(index, img);
  }
  return img;
}

function paint(
  canvas: HTMLCanvasElement,
  index: number | null,
  boxes: typeof controller.state.boxes | null,
  editable: boolean,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (index === null || boxes === null) {
    drawPlaceholder(ctx, "no previous frame");
    return;
  }
  const img = frameImage(index);
  if (img.complete && img.naturalWidth > 0) {
    ctx.drawImage(img, 0, 0);
  } else {
    drawPlaceholder(ctx, "loading…");
  }
  drawBoxes(ctx, boxes, { selectedId: editable ? controller.state.selectedId : null });
  if (editable && controller.state.proposal) {
    drawBoxes(ctx, controller.state.proposal, { dashed: true });
  }
  if (editable && drag) {
    drawRubberBand(
      ctx,
      Math.min(drag.x0, drag.x1),
      Math.min(drag.y0, drag.y1),
      Math.abs(drag.x1 - drag.x0),
      Math.abs(drag.y1 - drag.y0),
    );
  }
}

function render(): void {
  const s = controller.state;
  if (s.sequence) {
    prevCanvas.width = curCanvas.width = s.sequence.image_width;
    prevCanvas.height = curCanvas.height = s.sequence.image_height;
    frameLabel.textContent = `frame ${s.frameIndex} / ${s.sequence.frame_count - 1}`;
  }
  paint(prevCanvas, s.frameIndex > 0 ? s.frameIndex - 1 : null, s.prevBoxes, false);
  paint(curCanvas, s.frameIndex, s.boxes, true);
  errorBanner.textContent = s.error ?? "";
  errorBanner.style.display = s.error ? "block" : "none";
  dirtyBadge.style.display = s.dirty ? "inline" : "none";
  acceptBtn.style.display = s.proposal ? "inline" : "none";
  dismissBtn.style.display = s.proposal ? "inline" : "none";
  const sel = s.boxes.find((b) => b.id === s.selectedId);
  idInput.disabled = !sel;
  if (sel && document.activeElement !== idInput) idInput.value = String(sel.id);
  if (!sel) idInput.value = "";
}

function canvasPoint(event: MouseEvent): { x: number; y: number } {
  const rect = curCanvas.getBoundingClientRect();
  return {
    x: ((event.clientX - rect.left) / rect.width) * curCanvas.width,
    y: ((event.clientY - rect.top) / rect.height) * curCanvas.height,
  };
}

curCanvas.addEventListener("mousedown", (event) => {
  const { x, y } = canvasPoint(event);
  const hit = controller.selectAt(x, y);
  if (hit === null) drag = { x0: x, y0: y, x1: x, y1: y };
  render();
});

curCanvas.addEventListener("mousemove", (event) => {
  if (!drag) return;
  const { x, y } = canvasPoint(event);
  drag.x1 = x;
  drag.y1 = y;
  render();
});

curCanvas.addEventListener("mouseup", async () => {
  if (!drag) return;
  const { x0, y0, x1, y1 } = drag;
  drag = null;
  const w = Math.abs(x1 - x0);
  const h = Math.abs(y1 - y0);
  if (w >= 3 && h >= 3) {
    await controller.drawBox(Math.min(x0, x1), Math.min(y0, y1), w, h);
  }
  render();
});

document.addEventListener("keydown", async (event) => {
  if (event.target === idInput) return;
  if (event.key === "Delete" || event.key === "Backspace") {
    await controller.deleteSelected();
  } else if (event.key === "ArrowRight") {
    await controller.next();
  } else if (event.key === "ArrowLeft") {
    await controller.prev();
  }
});

idInput.addEventListener("keydown", async (event) => {
  if (event.key !== "Enter") return;
  const value = Number(idInput.value);
  await controller.editSelectedId(value);
});

preassignBtn.addEventListener("click", () => controller.requestPreassign());
acceptBtn.addEventListener("click", () => controller.acceptProposal());
dismissBtn.addEventListener("click", () => controller.dismissProposal());
saveBtn.addEventListener("click", () => controller.saveAll());

controller.onChange = render;
controller.load();
