import type { LayoutBox } from "./types.js";

export interface ScaledBox {
  id: number;
  prompt: string;
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Map a prompt-book box from canvas pixels to rendered-image pixels.
 *  At scale 1 the result equals the book's coordinates exactly. */
export function scaleBox(box: LayoutBox, scale: number): ScaledBox {
  const [x, y, w, h] = box.box;
  return {
    id: box.id,
    prompt: box.prompt,
    x: x * scale,
    y: y * scale,
    w: w * scale,
    h: h * scale,
  };
}

export function scaleLayout(layout: LayoutBox[], scale: number): ScaledBox[] {
  return layout.map((box) => scaleBox(box, scale));
}

/** Topmost box under a point, honoring the prompt book's z-order
 *  (later entries sit on top). Returns null on empty space. */
export function boxAt(
  layout: LayoutBox[],
  x: number,
  y: number,
  scale: number,
): ScaledBox | null {
  const scaled = scaleLayout(layout, scale);
  for (let i = scaled.length - 1; i >= 0; i--) {
    const b = scaled[i];
    if (x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) {
      return b;
    }
  }
  return null;
}

const PALETTE = ["#ff5e5b", "#39a0ed", "#8ac926", "#ffca3a", "#c77dff", "#ff9770"];

export function boxColor(id: number): string {
  return PALETTE[((id - 1) % PALETTE.length + PALETTE.length) % PALETTE.length];
}

export function drawOverlay(
  ctx: CanvasRenderingContext2D,
  layout: LayoutBox[],
  scale: number,
  highlightId: number | null = null,
): void {
  ctx.clearRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  for (const box of scaleLayout(layout, scale)) {
    const color = boxColor(box.id);
    const active = highlightId !== null && box.id === highlightId;
    ctx.lineWidth = active ? 3 : 2;
    ctx.strokeStyle = color;
    ctx.strokeRect(box.x, box.y, box.w, box.h);
    if (active) {
      ctx.fillStyle = `${color}33`;
      ctx.fillRect(box.x, box.y, box.w, box.h);
    }
    const badge = `${box.id}`;
    ctx.font = "bold 13px system-ui, sans-serif";
    const width = ctx.measureText(badge).width + 10;
    ctx.fillStyle = color;
    ctx.fillRect(box.x, box.y, width, 18);
    ctx.fillStyle = "#fff";
    ctx.fillText(badge, box.x + 5, box.y + 13);
  }
}
