// Thin typed client for the grasp service. The viewer never computes
// geometry itself: every coordinate it draws comes from these payloads.

export interface GraspOut {
  center: number[];
  theta: number;
  beta: number;
  gamma: number;
  width: number;
  score: number;
  outline: number[][][]; // polylines of [u, v] pixel pairs
}

export interface ClickResponse {
  centers: number[][];
  center_pixels: number[][];
  grasps: GraspOut[];
  timings: { guidance_ms: number; predict_ms: number; total_ms: number };
  source: string;
}

export interface TargetInfo {
  object_id: number;
  visible_pixels: number;
  sample_pixel: [number, number];
}

export interface SimulateResponse {
  success: boolean;
  reason: string;
  report: { mu_min: number | null; collision: boolean; contact_object_ids: number[] | null };
}

export class NoTargetError extends Error {}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  private async json<T>(path: string, init?: RequestInit, signal?: AbortSignal): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, { ...init, signal });
    if (response.status === 422) {
      const body = await response.json().catch(() => ({ message: "no target" }));
      throw new NoTargetError(body.message ?? "no target");
    }
    if (!response.ok) {
      throw new Error(`${path} failed with ${response.status}`);
    }
    return (await response.json()) as T;
  }

  version(): Promise<{ version: string }> {
    return this.json("/version");
  }

  listScenes(): Promise<{ scenes: number[] }> {
    return this.json("/scenes");
  }

  createScene(seed: number, nObjects: number): Promise<{ scene_id: number }> {
    return this.json("/scenes", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ seed, n_objects: nObjects }),
    });
  }

  imageUrl(sceneId: number): string {
    return `${this.baseUrl}/scenes/${sceneId}/image`;
  }

  async depth(sceneId: number): Promise<{ data: Float32Array; width: number; height: number }> {
    const response = await this.fetchFn(`${this.baseUrl}/scenes/${sceneId}/depth`);
    if (!response.ok) throw new Error(`depth failed with ${response.status}`);
    const width = Number(response.headers.get("X-Width"));
    const height = Number(response.headers.get("X-Height"));
    const buffer = await response.arrayBuffer();
    return { data: new Float32Array(buffer), width, height };
  }

  targets(sceneId: number): Promise<{ targets: TargetInfo[] }> {
    return this.json(`/scenes/${sceneId}/targets`);
  }

  click(sceneId: number, u: number, v: number, k: number, signal?: AbortSignal): Promise<ClickResponse> {
    return this.json(
      `/scenes/${sceneId}/click`,
      {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ u, v, k }),
      },
      signal,
    );
  }

  simulate(sceneId: number, grasp: Omit<GraspOut, "outline">): Promise<SimulateResponse> {
    return this.json(`/scenes/${sceneId}/simulate`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ grasp }),
    });
  }
}
