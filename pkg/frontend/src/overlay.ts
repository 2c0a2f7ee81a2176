// Pure drawing-command generation. Commands carry the exact server
// coordinates scaled by the display zoom, so painting is a dumb replay and
// tests can assert on geometry without a canvas.

import type { ClickResponse } from "./api.js";

export interface Polyline {
  points: [number, number][];
  color: string;
  width: number;
}

export interface Marker {
  at: [number, number];
  color: string;
  radius: number;
}

export interface DrawCommands {
  polylines: Polyline[];
  markers: Marker[];
}

// high score -> red, low -> blue, matching the ranked-list convention
export function scoreColor(score: number, lo: number, hi: number): string {
  const span = hi - lo;
  const t = span > 1e-9 ? Math.min(1, Math.max(0, (score - lo) / span)) : 1;
  const r = Math.round(255 * t);
  const b = Math.round(255 * (1 - t));
  return `rgb(${r},40,${b})`;
}

export function buildOverlay(
  result: ClickResponse,
  selected: number | null,
  failed: number[],
  zoom: number,
): DrawCommands {
  const scores = result.grasps.map((g) => g.score);
  const lo = Math.min(...scores, 0);
  const hi = Math.max(...scores, 1e-9);
  const polylines: Polyline[] = [];
  result.grasps.forEach((grasp, index) => {
    const color = failed.includes(index) ? "rgb(128,128,128)" : scoreColor(grasp.score, lo, hi);
    const width = index === selected ? 3 : 1.5;
    for (const segment of grasp.outline) {
      polylines.push({
        points: segment.map(([u, v]) => [u * zoom, v * zoom] as [number, number]),
        color,
        width,
      });
    }
  });
  const markers: Marker[] = result.center_pixels.map(([u, v]) => ({
    at: [u * zoom, v * zoom],
    color: "rgb(255,220,0)",
    radius: 2.5 * zoom,
  }));
  return { polylines, markers };
}

export function paint(ctx: CanvasRenderingContext2D | null, commands: DrawCommands): void {
  if (!ctx) return;
  for (const line of commands.polylines) {
    ctx.strokeStyle = line.color;
    ctx.lineWidth = line.width;
    ctx.beginPath();
    line.points.forEach(([x, y], i) => (i === 0 ? ctx.moveTo(x, y) : ctx.lineTo(x, y)));
    ctx.stroke();
  }
  for (const marker of commands.markers) {
    ctx.fillStyle = marker.color;
    ctx.beginPath();
    ctx.arc(marker.at[0], marker.at[1], marker.radius, 0, 2 * Math.PI);
    ctx.fill();
  }
}

// linear grayscale over the valid depth range; invalid (zero) stays black
export function depthToGrayscale(depth: Float32Array): Uint8ClampedArray {
  let lo = Infinity;
  let hi = -Infinity;
  for (const d of depth) {
    if (d > 0) {
      if (d < lo) lo = d;
      if (d > hi) hi = d;
    }
  }
  const out = new Uint8ClampedArray(depth.length * 4);
  const span = hi > lo ? hi - lo : 1;
  for (let i = 0; i < depth.length; i += 1) {
    const d = depth[i];
    const value = d > 0 ? Math.round(255 * (1 - (d - lo) / span)) : 0;
    out[i * 4] = value;
    out[i * 4 + 1] = value;
    out[i * 4 + 2] = value;
    out[i * 4 + 3] = 255;
  }
  return out;
}
