import { idColor } from "./color.js";
import type { Box } from "./types.js";

export interface DrawOptions {
  selectedId?: number | null;
  dashed?: boolean;
}

export function drawBoxes(
  ctx: CanvasRenderingContext2D,
  boxes: Box[],
  opts: DrawOptions = {},
): void {
  for (const box of boxes) {
    const selected = opts.selectedId === box.id;
    ctx.save();
    ctx.strokeStyle = idColor(box.id);
    ctx.lineWidth = selected ? 3 : 1.5;
    ctx.setLineDash(opts.dashed ? [6, 4] : []);
    ctx.strokeRect(box.x, box.y, box.w, box.h);
    ctx.font = "12px sans-serif";
    ctx.fillStyle = idColor(box.id);
    ctx.fillText(String(box.id), box.x + 2, Math.max(box.y - 3, 10));
    ctx.restore();
  }
}

export function drawPlaceholder(ctx: CanvasRenderingContext2D, text: string): void {
  const { width, height } = ctx.canvas;
  ctx.save();
  ctx.fillStyle = "#1b2733";
  ctx.fillRect(0, 0, width, height);
  ctx.fillStyle = "#8aa0b4";
  ctx.font = "14px sans-serif";
  ctx.textAlign = "center";
  ctx.fillText(text, width / 2, height / 2);
  ctx.restore();
}

export function drawRubberBand(
  ctx: CanvasRenderingContext2D,
  x: number,
  y: number,
  w: number,
  h: number,
): void {
  ctx.save();
  ctx.strokeStyle = "#ffffff";
  ctx.setLineDash([4, 3]);
  ctx.lineWidth = 1;
  ctx.strokeRect(x, y, w, h);
  ctx.restore();
}
