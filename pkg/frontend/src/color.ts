// Deterministic id -> stroke color so the same id matches across both
// canvases and across reloads. Golden-angle hue spacing keeps nearby ids
// visually distinct.
const GOLDEN_ANGLE = 137.50776405003785;

export function idColor(id: number): string {
  const hue = ((id * GOLDEN_ANGLE) % 360 + 360) % 360;
  return `hsl(${hue.toFixed(2)}, 85%, 60%)`;
}
