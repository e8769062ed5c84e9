import type { ShapePayload } from "./types.js";

/** Canvas renderer for one rotating voxel shape.
 *
 * Orthographic projection with a fixed downward tilt, spinning about the
 * vertical axis; occupied cells are painter-sorted by depth and drawn as
 * shaded quads. Environments without a 2D context (headless tests) still
 * track the last rendered angle.
 */
export class VoxelView {
  lastAngle: number | null = null;
  private shape: ShapePayload | null = null;
  private centered: number[][] = [];
  private scale = 1;
  private readonly tilt = Math.PI / 7;

  constructor(private canvas: HTMLCanvasElement) {}

  setShape(shape: ShapePayload): void {
    this.shape = shape;
    const [dx, dy, dz] = shape.dims;
    this.centered = shape.occupied.map(([x, y, z]) => [
      x + 0.5 - dx / 2,
      y + 0.5 - dy / 2,
      z + 0.5 - dz / 2,
    ]);
    const radius = Math.max(dx, dy, dz) / 2;
    this.scale = Math.min(this.canvas.width, this.canvas.height) / (3.2 * radius);
    this.lastAngle = null;
  }

  clear(): void {
    this.shape = null;
    this.centered = [];
    this.lastAngle = null;
    const ctx = this.canvas.getContext("2d");
    if (ctx) ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
  }

  render(angle: number): void {
    this.lastAngle = angle;
    if (!this.shape) return;
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return; // headless: angle bookkeeping only
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    const cosA = Math.cos(angle);
    const sinA = Math.sin(angle);
    const cosT = Math.cos(this.tilt);
    const sinT = Math.sin(this.tilt);
    const projected = this.centered.map(([x, y, z]) => {
      const rx = x * cosA - y * sinA;
      const ry = x * sinA + y * cosA;
      const sy = ry * cosT - z * sinT;
      const depth = ry * sinT + z * cosT;
      return { sx: rx, sy, depth };
    });
    projected.sort((p, q) => p.depth - q.depth);
    const s = this.scale;
    const side = Math.max(2, s);
    for (const { sx, sy, depth } of projected) {
      const px = width / 2 + sx * s;
      const py = height / 2 - sy * s;
      const shade = Math.round(140 + 70 * Math.tanh(depth / 6));
      ctx.fillStyle = `rgb(${shade0(shade)}, ${shade}, ${Math.min(255, shade + 40)})`;
      ctx.fillRect(px - side / 2, py - side / 2, side, side);
      ctx.strokeStyle = "rgba(20,24,40,0.35)";
      ctx.strokeRect(px - side / 2, py - side / 2, side, side);
    }
  }
}

function shade0(shade: number): number {
  return Math.max(0, shade - 60);
}

/** Paint a depth-map query image onto a canvas (grayscale). */
export function drawImagePayload(canvas: HTMLCanvasElement, pixels: number[][]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const h = pixels.length;
  const w = pixels[0]?.length ?? 0;
  const cell = Math.max(1, Math.floor(Math.min(canvas.width / w, canvas.height / h)));
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  for (let i = 0; i < h; i++) {
    for (let j = 0; j < w; j++) {
      const v = Math.round(255 * (1 - pixels[i][j]));
      ctx.fillStyle = `rgb(${v}, ${v}, ${v})`;
      ctx.fillRect(j * cell, i * cell, cell, cell);
    }
  }
}
