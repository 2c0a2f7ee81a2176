"""HTTP service for the interactive viewer.

Scenes render once at creation; guidance requests reuse the cached snapshot
and identical requests return byte-identical cached responses. All geometry
is computed server-side so the browser stays a thin canvas.
"""

from __future__ import annotations

import hashlib
import io
import json
import threading
import time
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from . import __version__
from .detector import AnalyticPredictor
from .errors import NoTargetError, TargetGraspError
from .evaluation import (
    MIN_VISIBLE_PIXELS,
    SUCCESS_MU,
    collision_check,
    find_contacts,
    min_friction,
    visibility_counts,
)
from .geometry import GraspPose
from .guidance import mask_from_rle, pgm_bytes_to_mask
from .pipeline import SceneSnapshot, detect_grasps, gripper_outline, resolve_guidance
from .scene import generate_clutter, load_scene


class SceneStore:
    """Append-only snapshot store with monotonically increasing ids."""

    def __init__(self):
        self._lock = threading.Lock()
        self._scenes = {}
        self._next_id = 1
        self._response_cache = {}

    def add(self, snapshot: SceneSnapshot) -> int:
        with self._lock:
            scene_id = self._next_id
            self._next_id += 1
            self._scenes[scene_id] = snapshot
        return scene_id

    def get(self, scene_id: int) -> SceneSnapshot:
        with self._lock:
            if scene_id not in self._scenes:
                raise KeyError(scene_id)
            return self._scenes[scene_id]

    def ids(self):
        with self._lock:
            return sorted(self._scenes)

    def cached(self, key):
        with self._lock:
            return self._response_cache.get(key)

    def cache(self, key, payload: bytes):
        with self._lock:
            self._response_cache[key] = payload


def _json_bytes(payload) -> bytes:
    return json.dumps(payload, sort_keys=True).encode()


def _guidance_response(store: SceneStore, scene_id: int, key, spec: dict, k_centers: int, k_grasps: int) -> bytes:
    cached = store.cached(key)
    if cached is not None:
        return cached
    snapshot = store.get(scene_id)
    t0 = time.perf_counter()
    guidance = resolve_guidance(snapshot, spec, k=k_centers, seed=scene_id)
    t1 = time.perf_counter()
    grasps = detect_grasps(snapshot, guidance, AnalyticPredictor(), k_grasps=k_grasps)
    t2 = time.perf_counter()
    cam = snapshot.scene.camera
    from .geometry import project

    center_pixels = []
    for c in guidance.centers:
        u, v = project(np.asarray(c), cam)
        center_pixels.append([float(u), float(v)])
    payload = {
        "centers": [[float(x) for x in c] for c in guidance.centers],
        "center_pixels": center_pixels,
        "grasps": [
            dict(g.to_dict(), outline=gripper_outline(g, cam))
            for g in grasps
        ],
        "timings": {
            "guidance_ms": round((t1 - t0) * 1000.0, 3),
            "predict_ms": round((t2 - t1) * 1000.0, 3),
            "total_ms": round((t2 - t0) * 1000.0, 3),
        },
        "source": guidance.source,
    }
    body = _json_bytes(payload)
    store.cache(key, body)
    return body


def create_app(scene_dir=None) -> FastAPI:
    app = FastAPI(title="targetgrasp", version=__version__)
    store = SceneStore()
    app.state.store = store

    if scene_dir:
        for path in sorted(Path(scene_dir).glob("*.json")):
            store.add(SceneSnapshot.create(load_scene(path)))

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "format", "message": str(exc.errors()[:1])})

    @app.exception_handler(TargetGraspError)
    async def domain_error(request: Request, exc: TargetGraspError):
        status = 422 if isinstance(exc, NoTargetError) else 400
        return JSONResponse(status_code=status, content=exc.payload())

    @app.exception_handler(KeyError)
    async def unknown_scene(request: Request, exc: KeyError):
        return JSONResponse(status_code=404, content={"error": "unknown-scene", "message": str(exc)})

    @app.get("/version")
    def version():
        return {"version": __version__}

    @app.get("/scenes")
    def list_scenes():
        return {"scenes": store.ids()}

    @app.post("/scenes")
    def create_scene(body: dict):
        try:
            seed = int(body["seed"])
            n_objects = int(body.get("n_objects", 5))
        except (KeyError, TypeError, ValueError):
            return JSONResponse(status_code=400, content={"error": "format", "message": "need seed and n_objects"})
        scene = generate_clutter(seed, n_objects)
        scene_id = store.add(SceneSnapshot.create(scene))
        return {"scene_id": scene_id}

    @app.get("/scenes/{scene_id}/image")
    def scene_image(scene_id: int):
        snapshot = store.get(scene_id)
        key = ("image", scene_id)
        cached = store.cached(key)
        if cached is None:
            from PIL import Image

            rgb8 = (np.clip(snapshot.image.rgb, 0, 1) * 255).astype(np.uint8)
            buf = io.BytesIO()
            Image.fromarray(rgb8).save(buf, format="PNG", optimize=False)
            cached = buf.getvalue()
            store.cache(key, cached)
        return Response(content=cached, media_type="image/png")

    @app.get("/scenes/{scene_id}/depth")
    def scene_depth(scene_id: int):
        snapshot = store.get(scene_id)
        img = snapshot.image
        return Response(
            content=img.depth.astype("<f4").tobytes(),
            media_type="application/octet-stream",
            headers={"X-Width": str(img.width), "X-Height": str(img.height)},
        )

    @app.get("/scenes/{scene_id}/targets")
    def scene_targets(scene_id: int):
        snapshot = store.get(scene_id)
        counts = visibility_counts(snapshot.image, snapshot.scene)
        targets = []
        ids_map = snapshot.image.object_ids
        for oid in sorted(counts):
            if counts[oid] < MIN_VISIBLE_PIXELS:
                continue
            vs, us = np.nonzero(ids_map == oid)
            cu, cv = us.mean(), vs.mean()
            pick = int(np.argmin((us - cu) ** 2 + (vs - cv) ** 2))
            targets.append(
                {
                    "object_id": int(oid),
                    "visible_pixels": int(counts[oid]),
                    "sample_pixel": [int(us[pick]), int(vs[pick])],
                }
            )
        return {"targets": targets}

    @app.post("/scenes/{scene_id}/click")
    def scene_click(scene_id: int, body: dict):
        snapshot = store.get(scene_id)
        try:
            u, v = int(body["u"]), int(body["v"])
            k = int(body.get("k", 10))
        except (KeyError, TypeError, ValueError):
            return JSONResponse(status_code=400, content={"error": "format", "message": "need integer u, v"})
        img = snapshot.image
        if not (0 <= u < img.width and 0 <= v < img.height):
            return JSONResponse(status_code=400, content={"error": "format", "message": "click outside the image"})
        key = ("click", scene_id, u, v, k)
        # interactive budget: click patches overlap heavily inside the 2 cm
        # neighborhood, so fewer centers keep the round trip under 500 ms
        return Response(content=_guidance_response(store, scene_id, key, {"click": (u, v)}, 5, k), media_type="application/json")

    @app.post("/scenes/{scene_id}/mask")
    async def scene_mask(scene_id: int, request: Request):
        snapshot = store.get(scene_id)
        raw = await request.body()
        k = int(request.query_params.get("k", 10))
        if raw.startswith(b"P5"):
            mask = pgm_bytes_to_mask(raw)
        else:
            try:
                mask = mask_from_rle(json.loads(raw.decode()))
            except (ValueError, UnicodeDecodeError):
                return JSONResponse(status_code=400, content={"error": "format", "message": "mask must be PGM or RLE JSON"})
        key = ("mask", scene_id, hashlib.sha256(raw).hexdigest(), k)
        return Response(
            content=_guidance_response(store, scene_id, key, {"mask": mask}, 8, k),
            media_type="application/json",
        )

    @app.post("/scenes/{scene_id}/simulate")
    def scene_simulate(scene_id: int, body: dict):
        snapshot = store.get(scene_id)
        try:
            grasp = GraspPose.from_dict(body["grasp"])
        except (KeyError, TypeError, ValueError):
            return JSONResponse(status_code=400, content={"error": "format", "message": "need a grasp object"})
        collides = collision_check(grasp, snapshot.cloud.points)
        mu = None if collides else min_friction(grasp, snapshot.scene)
        contacts = find_contacts(grasp, snapshot.scene)
        success = (not collides) and mu is not None and mu <= SUCCESS_MU
        reason = "ok" if success else ("collision" if collides else "no force closure")
        return {
            "success": success,
            "reason": reason,
            "report": {
                "mu_min": mu,
                "collision": bool(collides),
                "contact_object_ids": list(contacts.object_ids) if contacts else None,
            },
        }

    ui_dir = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
