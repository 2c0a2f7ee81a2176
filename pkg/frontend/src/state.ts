// Viewer state and its pure transitions; the DOM layer renders whatever is
// in here and never holds truth of its own.

import type { ClickResponse, SimulateResponse } from "./api.js";

export interface ViewerState {
  sceneId: number | null;
  lastClick: [number, number] | null;
  result: ClickResponse | null;
  selected: number | null;
  failed: number[]; // indices of grasps the simulator rejected
  lastOutcome: SimulateResponse | null;
  notice: string | null;
}

export function initialState(): ViewerState {
  return {
    sceneId: null,
    lastClick: null,
    result: null,
    selected: null,
    failed: [],
    lastOutcome: null,
    notice: null,
  };
}

export function switchScene(state: ViewerState, sceneId: number): ViewerState {
  // everything about the previous scene is stale
  return { ...initialState(), sceneId };
}

export function applyClickResult(
  state: ViewerState,
  pixel: [number, number],
  result: ClickResponse,
): ViewerState {
  return {
    ...state,
    lastClick: pixel,
    result,
    selected: result.grasps.length > 0 ? 0 : null,
    failed: [],
    lastOutcome: null,
    notice: result.grasps.length === 0 ? "no grasps found here" : null,
  };
}

export function applyNoTarget(state: ViewerState, pixel: [number, number]): ViewerState {
  return {
    ...state,
    lastClick: pixel,
    result: null,
    selected: null,
    failed: [],
    lastOutcome: null,
    notice: "no target here",
  };
}

export function selectGrasp(state: ViewerState, index: number): ViewerState {
  const count = state.result?.grasps.length ?? 0;
  if (index < 0 || index >= count) {
    return state;
  }
  return { ...state, selected: index };
}

export function applySimulationOutcome(state: ViewerState, outcome: SimulateResponse): ViewerState {
  if (state.selected === null) {
    return state;
  }
  const failed =
    outcome.success || state.failed.includes(state.selected)
      ? state.failed
      : [...state.failed, state.selected];
  return { ...state, lastOutcome: outcome, failed };
}

export function nextUntriedGrasp(state: ViewerState): number | null {
  const count = state.result?.grasps.length ?? 0;
  for (let i = 0; i < count; i += 1) {
    if (!state.failed.includes(i)) {
      return i;
    }
  }
  return null;
}
