import { describe, expect, it } from "vitest";

import type { ClickResponse, SimulateResponse } from "../src/api.js";
import {
  applyClickResult,
  applyNoTarget,
  applySimulationOutcome,
  initialState,
  nextUntriedGrasp,
  selectGrasp,
  switchScene,
} from "../src/state.js";

function clickResponse(nGrasps: number): ClickResponse {
  return {
    centers: [[0, 0, 0.5]],
    center_pixels: [[320, 240]],
    grasps: Array.from({ length: nGrasps }, (_, i) => ({
      center: [0, 0, 0.5],
      theta: 0,
      beta: 0,
      gamma: 0,
      width: 0.06,
      score: 1 - i * 0.1,
      outline: [
        [
          [10, 10],
          [20, 20],
        ],
      ],
    })),
    timings: { guidance_ms: 1, predict_ms: 2, total_ms: 3 },
    source: "click",
  };
}

const failure: SimulateResponse = {
  success: false,
  reason: "collision",
  report: { mu_min: null, collision: true, contact_object_ids: null },
};

describe("viewer state", () => {
  it("selects the top grasp after a click", () => {
    const s = applyClickResult(switchScene(initialState(), 1), [5, 6], clickResponse(3));
    expect(s.selected).toBe(0);
    expect(s.lastClick).toEqual([5, 6]);
    expect(s.notice).toBeNull();
  });

  it("keeps selection inside bounds", () => {
    let s = applyClickResult(switchScene(initialState(), 1), [0, 0], clickResponse(2));
    s = selectGrasp(s, 5);
    expect(s.selected).toBe(0);
    s = selectGrasp(s, 1);
    expect(s.selected).toBe(1);
  });

  it("resets everything on scene switch", () => {
    let s = applyClickResult(switchScene(initialState(), 1), [0, 0], clickResponse(2));
    s = applySimulationOutcome(selectGrasp(s, 1), failure);
    const fresh = switchScene(s, 2);
    expect(fresh.sceneId).toBe(2);
    expect(fresh.result).toBeNull();
    expect(fresh.selected).toBeNull();
    expect(fresh.failed).toEqual([]);
    expect(fresh.lastOutcome).toBeNull();
  });

  it("grays out failed grasps so the user can try the next", () => {
    let s = applyClickResult(switchScene(initialState(), 1), [0, 0], clickResponse(3));
    s = applySimulationOutcome(s, failure);
    expect(s.failed).toEqual([0]);
    expect(nextUntriedGrasp(s)).toBe(1);
    s = applySimulationOutcome(selectGrasp(s, 1), { ...failure, reason: "no force closure" });
    expect(s.failed).toEqual([0, 1]);
    expect(nextUntriedGrasp(s)).toBe(2);
  });

  it("success does not gray the grasp", () => {
    let s = applyClickResult(switchScene(initialState(), 1), [0, 0], clickResponse(1));
    s = applySimulationOutcome(s, {
      success: true,
      reason: "ok",
      report: { mu_min: 0.2, collision: false, contact_object_ids: [1, 1] },
    });
    expect(s.failed).toEqual([]);
    expect(s.lastOutcome?.success).toBe(true);
  });

  it("records the no-target notice without touching grasps", () => {
    const s = applyNoTarget(switchScene(initialState(), 1), [3, 4]);
    expect(s.notice).toBe("no target here");
    expect(s.result).toBeNull();
  });
});
