// DOM wiring: one canvas stack (scene image + overlay), a ranked grasp
// list, a simulate button and an outcome banner. At most one guidance
// request is in flight; newer clicks abort superseded ones.

import { ApiClient, NoTargetError, type ClickResponse } from "./api.js";
import { buildOverlay, depthToGrayscale, paint, type DrawCommands } from "./overlay.js";
import {
  applyClickResult,
  applyNoTarget,
  applySimulationOutcome,
  initialState,
  selectGrasp,
  switchScene,
  type ViewerState,
} from "./state.js";

const WIDTH = 640;
const HEIGHT = 480;

// canvas-less environments (jsdom) throw instead of returning null
function context2d(canvas: HTMLCanvasElement): CanvasRenderingContext2D | null {
  try {
    return canvas.getContext("2d");
  } catch {
    return null;
  }
}

export class ViewerApp {
  state: ViewerState = initialState();
  lastCommands: DrawCommands = { polylines: [], markers: [] };
  private inflight: AbortController | null = null;
  private depthShown = false;

  constructor(
    private doc: Document,
    private api: ApiClient,
    private zoom: number = 1,
  ) {}

  mount(root: HTMLElement): void {
    root.innerHTML = `
      <div class="bar">
        <label>seed <input id="seed" type="number" value="7" style="width:5em"></label>
        <label>objects <input id="objects" type="number" value="5" min="4" max="8" style="width:4em"></label>
        <button id="new-scene">new scene</button>
        <select id="scene-picker"></select>
        <button id="depth-toggle">depth</button>
        <span id="notice" class="notice"></span>
      </div>
      <div class="stack" style="position:relative;width:${WIDTH * this.zoom}px;height:${HEIGHT * this.zoom}px">
        <img id="scene-image" width="${WIDTH * this.zoom}" height="${HEIGHT * this.zoom}" alt="scene">
        <canvas id="depth-canvas" width="${WIDTH}" height="${HEIGHT}"
                style="position:absolute;left:0;top:0;display:none"></canvas>
        <canvas id="overlay" width="${WIDTH * this.zoom}" height="${HEIGHT * this.zoom}"
                style="position:absolute;left:0;top:0;cursor:crosshair"></canvas>
      </div>
      <div class="side">
        <ol id="grasp-list"></ol>
        <button id="simulate" disabled>simulate selected</button>
        <div id="banner" class="banner"></div>
      </div>`;

    this.el<HTMLButtonElement>("new-scene").addEventListener("click", () => void this.newScene());
    this.el<HTMLSelectElement>("scene-picker").addEventListener("change", (e) => {
      const id = Number((e.target as HTMLSelectElement).value);
      if (Number.isFinite(id) && id > 0) void this.showScene(id);
    });
    this.el<HTMLCanvasElement>("overlay").addEventListener("click", (event) => {
      const rect = (event.target as HTMLCanvasElement).getBoundingClientRect();
      const u = Math.floor((event.clientX - rect.left) / this.zoom);
      const v = Math.floor((event.clientY - rect.top) / this.zoom);
      void this.clickAt(u, v);
    });
    this.el<HTMLButtonElement>("simulate").addEventListener("click", () => void this.simulateSelected());
    this.el<HTMLButtonElement>("depth-toggle").addEventListener("click", () => void this.toggleDepth());
    void this.refreshSceneList();
  }

  el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  async refreshSceneList(): Promise<void> {
    const { scenes } = await this.api.listScenes();
    const picker = this.el<HTMLSelectElement>("scene-picker");
    picker.innerHTML =
      `<option value="">scene…</option>` +
      scenes.map((id) => `<option value="${id}">scene ${id}</option>`).join("");
    if (this.state.sceneId !== null) picker.value = String(this.state.sceneId);
  }

  async newScene(): Promise<void> {
    const seed = Number(this.el<HTMLInputElement>("seed").value) || 0;
    const objects = Number(this.el<HTMLInputElement>("objects").value) || 5;
    const { scene_id } = await this.api.createScene(seed, objects);
    await this.refreshSceneList();
    await this.showScene(scene_id);
  }

  async showScene(sceneId: number): Promise<void> {
    this.state = switchScene(this.state, sceneId);
    this.el<HTMLImageElement>("scene-image").src = this.api.imageUrl(sceneId);
    this.el<HTMLSelectElement>("scene-picker").value = String(sceneId);
    this.render();
  }

  async clickAt(u: number, v: number): Promise<void> {
    if (this.state.sceneId === null) return;
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;
    try {
      const result = await this.api.click(this.state.sceneId, u, v, 10, controller.signal);
      if (controller.signal.aborted) return;
      this.state = applyClickResult(this.state, [u, v], result);
    } catch (err) {
      if (controller.signal.aborted) return;
      if (err instanceof NoTargetError) {
        this.state = applyNoTarget(this.state, [u, v]);
      } else {
        this.state = { ...this.state, notice: `request failed: ${(err as Error).message}` };
      }
    } finally {
      if (this.inflight === controller) this.inflight = null;
    }
    this.render();
  }

  async simulateSelected(): Promise<void> {
    const { sceneId, selected, result } = this.state;
    if (sceneId === null || selected === null || !result) return;
    const { outline: _outline, ...grasp } = result.grasps[selected];
    try {
      const outcome = await this.api.simulate(sceneId, grasp);
      this.state = applySimulationOutcome(this.state, outcome);
    } catch (err) {
      this.state = { ...this.state, notice: `simulate failed: ${(err as Error).message} (retry)` };
    }
    this.render();
  }

  async toggleDepth(): Promise<void> {
    const canvas = this.el<HTMLCanvasElement>("depth-canvas");
    if (!this.depthShown && this.state.sceneId !== null) {
      const { data, width, height } = await this.api.depth(this.state.sceneId);
      const ctx = context2d(canvas);
      if (ctx) {
        const image = ctx.createImageData(width, height);
        image.data.set(depthToGrayscale(data));
        ctx.putImageData(image, 0, 0);
      }
    }
    this.depthShown = !this.depthShown;
    canvas.style.display = this.depthShown ? "block" : "none";
  }

  render(): void {
    const notice = this.el<HTMLSpanElement>("notice");
    notice.textContent = this.state.notice ?? "";

    const list = this.el<HTMLOListElement>("grasp-list");
    const grasps = this.state.result?.grasps ?? [];
    list.innerHTML = "";
    grasps.forEach((grasp, index) => {
      const item = this.doc.createElement("li");
      item.textContent = `score ${grasp.score.toFixed(3)} width ${(grasp.width * 1000).toFixed(0)}mm`;
      item.dataset.index = String(index);
      if (index === this.state.selected) item.classList.add("selected");
      if (this.state.failed.includes(index)) item.classList.add("failed");
      item.addEventListener("click", () => {
        this.state = selectGrasp(this.state, index);
        this.render();
      });
      list.appendChild(item);
    });

    this.el<HTMLButtonElement>("simulate").disabled = this.state.selected === null;

    const banner = this.el<HTMLDivElement>("banner");
    const outcome = this.state.lastOutcome;
    if (outcome) {
      banner.textContent = outcome.success ? "success" : `failed: ${outcome.reason}`;
      banner.className = `banner ${outcome.success ? "ok" : "bad"}`;
    } else {
      banner.textContent = "";
      banner.className = "banner";
    }

    this.lastCommands = this.state.result
      ? buildOverlay(this.state.result, this.state.selected, this.state.failed, this.zoom)
      : { polylines: [], markers: [] };
    const canvas = this.el<HTMLCanvasElement>("overlay");
    const ctx = context2d(canvas);
    if (ctx) {
      ctx.clearRect(0, 0, canvas.width, canvas.height);
      paint(ctx, this.lastCommands);
    }
  }
}

export function boot(doc: Document, baseUrl = ""): ViewerApp {
  const app = new ViewerApp(doc, new ApiClient(baseUrl));
  const root = doc.getElementById("app");
  if (!root) throw new Error("missing #app root");
  app.mount(root);
  return app;
}

declare global {
  interface Window {
    viewerApp?: ViewerApp;
  }
}

if (typeof window !== "undefined" && typeof document !== "undefined" && document.getElementById("app")) {
  window.viewerApp = boot(document);
}
