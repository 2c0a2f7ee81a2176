import { describe, expect, it } from "vitest";

import type { ClickResponse } from "../src/api.js";
import { buildOverlay, depthToGrayscale, scoreColor } from "../src/overlay.js";

const result: ClickResponse = {
  centers: [[0, 0, 0.5]],
  center_pixels: [[100, 50]],
  grasps: [
    {
      center: [0, 0, 0.5],
      theta: 0,
      beta: 0,
      gamma: 0,
      width: 0.06,
      score: 0.9,
      outline: [
        [
          [10, 20],
          [30, 40],
        ],
        [
          [50, 60],
          [70, 80],
        ],
      ],
    },
    {
      center: [0.01, 0, 0.5],
      theta: 0.2,
      beta: 0,
      gamma: 0,
      width: 0.05,
      score: 0.2,
      outline: [
        [
          [1, 2],
          [3, 4],
        ],
      ],
    },
  ],
  timings: { guidance_ms: 1, predict_ms: 1, total_ms: 2 },
  source: "click",
};

describe("overlay", () => {
  it("scales server coordinates by the zoom factor only", () => {
    const zoom2 = buildOverlay(result, 0, [], 2);
    expect(zoom2.polylines[0].points).toEqual([
      [20, 40],
      [60, 80],
    ]);
    expect(zoom2.markers[0].at).toEqual([200, 100]);
    const zoom1 = buildOverlay(result, 0, [], 1);
    expect(zoom1.polylines[0].points).toEqual([
      [10, 20],
      [30, 40],
    ]);
  });

  it("maps high scores red and low scores blue", () => {
    expect(scoreColor(1.0, 0, 1)).toBe("rgb(255,40,0)");
    expect(scoreColor(0.0, 0, 1)).toBe("rgb(0,40,255)");
  });

  it("grays failed grasps and thickens the selected one", () => {
    const commands = buildOverlay(result, 0, [1], 1);
    expect(commands.polylines[0].width).toBeGreaterThan(commands.polylines[2].width);
    expect(commands.polylines[2].color).toBe("rgb(128,128,128)");
  });

  it("emits one polyline per outline segment", () => {
    const commands = buildOverlay(result, null, [], 1);
    expect(commands.polylines).toHaveLength(3);
    expect(commands.markers).toHaveLength(1);
  });

  it("renders depth as normalized grayscale with black invalids", () => {
    const depth = new Float32Array([0, 0.4, 0.6]);
    const rgba = depthToGrayscale(depth);
    expect(rgba[0]).toBe(0); // invalid stays black
    expect(rgba[4]).toBe(255); // nearest is brightest
    expect(rgba[8]).toBe(0); // farthest is darkest (still opaque)
    expect(rgba[3]).toBe(255);
    expect(rgba[11]).toBe(255);
  });
});
