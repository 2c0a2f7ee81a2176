"""Triangle meshes: primitive construction, ray casting and distance queries.

All primitives are built centered at the object-frame origin with outward
winding, and are closed (every edge is shared by exactly two triangles).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, FormatError

_EPS = 1e-12


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, object frame, meters
    triangles: np.ndarray  # (T, 3) int32 vertex indices
    normals: np.ndarray = None  # (T, 3) outward unit normals

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if self.triangles.size and self.triangles.max() >= len(self.vertices):
            raise FormatError("triangle index out of range")
        if self.normals is None:
            self.normals = triangle_normals(self.vertices, self.triangles)
        else:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)

    @property
    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "TriangleMesh":
        R = np.asarray(rotation, dtype=float)
        t = np.asarray(translation, dtype=float)
        return TriangleMesh(
            vertices=self.vertices @ R.T + t,
            triangles=self.triangles.copy(),
            normals=self.normals @ R.T,
        )

    def surface_area(self) -> float:
        c = self.corners
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return float(0.5 * np.linalg.norm(cross, axis=1).sum())

    def volume(self) -> float:
        """Signed volume via the divergence theorem (positive for outward winding)."""
        c = self.corners
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def is_closed(self) -> bool:
        edges = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                edges[key] = edges.get(key, 0) + 1
        return all(count == 2 for count in edges.values())


def triangle_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    c = vertices[triangles]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    lens = np.linalg.norm(n, axis=1, keepdims=True)
    lens[lens < _EPS] = 1.0
    return n / lens


def make_box(sx: float, sy: float, sz: float) -> TriangleMesh:
    if min(sx, sy, sz) <= 0:
        raise DomainError("box dimensions must be positive")
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    v = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # bottom (-z)
            [4, 5, 6], [4, 6, 7],  # top (+z)
            [0, 1, 5], [0, 5, 4],  # -y
            [2, 3, 7], [2, 7, 6],  # +y
            [1, 2, 6], [1, 6, 5],  # +x
            [3, 0, 4], [3, 4, 7],  # -x
        ]
    )
    return TriangleMesh(v, f)


def make_sphere(radius: float, segments: int = 32) -> TriangleMesh:
    if radius <= 0:
        raise DomainError("sphere radius must be positive")
    if segments < 8:
        raise DomainError("curved primitives need at least 8 segments")
    rings = max(segments // 2, 4)
    verts = [np.array([0.0, 0.0, radius])]
    for i in range(1, rings):
        polar = np.pi * i / rings
        z = radius * np.cos(polar)
        rho = radius * np.sin(polar)
        for j in range(segments):
            az = 2.0 * np.pi * j / segments
            verts.append(np.array([rho * np.cos(az), rho * np.sin(az), z]))
    verts.append(np.array([0.0, 0.0, -radius]))
    v = np.array(verts)
    last = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(segments):
        faces.append([last, ring(rings - 1, j + 1), ring(rings - 1, j)])
    return TriangleMesh(v, np.array(faces))


def make_cylinder(radius: float, height: float, segments: int = 32) -> TriangleMesh:
    if radius <= 0 or height <= 0:
        raise DomainError("cylinder dimensions must be positive")
    if segments < 8:
        raise DomainError("curved primitives need at least 8 segments")
    hz = height / 2.0
    verts = [np.array([0.0, 0.0, hz]), np.array([0.0, 0.0, -hz])]
    for j in range(segments):
        az = 2.0 * np.pi * j / segments
        verts.append(np.array([radius * np.cos(az), radius * np.sin(az), hz]))
    for j in range(segments):
        az = 2.0 * np.pi * j / segments
        verts.append(np.array([radius * np.cos(az), radius * np.sin(az), -hz]))
    v = np.array(verts)

    def top(j):
        return 2 + (j % segments)

    def bot(j):
        return 2 + segments + (j % segments)

    faces = []
    for j in range(segments):
        faces.append([0, top(j), top(j + 1)])  # top cap (+z)
        faces.append([1, bot(j + 1), bot(j)])  # bottom cap (-z)
        faces.append([top(j), bot(j), bot(j + 1)])  # side
        faces.append([top(j), bot(j + 1), top(j + 1)])
    return TriangleMesh(v, np.array(faces))


def make_primitive(kind: str, **dims) -> TriangleMesh:
    """Build a closed primitive mesh: box | cylinder | sphere."""
    if kind == "box":
        return make_box(dims["sx"], dims["sy"], dims["sz"])
    if kind == "sphere":
        return make_sphere(dims["radius"], dims.get("segments", 32))
    if kind == "cylinder":
        return make_cylinder(dims["radius"], dims["height"], dims.get("segments", 32))
    raise DomainError(f"unknown primitive kind {kind!r}")


def load_obj(path) -> TriangleMesh:
    """Read an ASCII OBJ limited to v/f records with triangular faces."""
    verts, faces = [], []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FormatError(f"line {lineno}: malformed vertex record")
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise FormatError(f"line {lineno}: only triangular faces are supported")
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                faces.append([i - 1 for i in idx])
            elif parts[0] in ("vn", "vt", "o", "g", "s", "mtllib", "usemtl"):
                continue
            else:
                raise FormatError(f"line {lineno}: unsupported record {parts[0]!r}")
    if not verts or not faces:
        raise FormatError("OBJ contains no triangles")
    return TriangleMesh(np.array(verts), np.array(faces))


def rays_intersect_triangles(
    origins: np.ndarray,
    directions: np.ndarray,
    corners: np.ndarray,
    t_min: float = 1e-9,
    block: int = 4096,
):
    """Nearest hit of each ray against a triangle soup (Moller-Trumbore).

    With a shared origin the barycentric terms collapse into scalar triple
    products, so every block is three matrix products; distinct origins fall
    back to a per-pair formulation.

    Args:
        origins: (N, 3) ray origins (a single (3,) origin broadcasts).
        directions: (N, 3) unit ray directions.
        corners: (T, 3, 3) triangle corners.
        block: rays per block (shared origin) / triangles per block otherwise.

    Returns:
        (t, tri): (N,) hit distances (inf for misses) and triangle indices (-1).
    """
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    n = len(directions)
    origins = np.asarray(origins, dtype=float)
    if origins.ndim == 1:
        return _common_origin_hits(origins, directions, corners, t_min, block)
    origins = np.broadcast_to(origins, (n, 3))
    if n > 0 and np.ptp(origins, axis=0).max() == 0.0:
        return _common_origin_hits(origins[0], directions, corners, t_min, block)

    v0 = corners[:, 0]
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    for start in range(0, len(v0), block):
        sl = slice(start, min(start + block, len(v0)))
        b0, b1, b2 = v0[sl], e1[sl], e2[sl]
        pvec = np.cross(directions[:, None, :], b2[None, :, :])
        det = np.einsum("tj,ntj->nt", b1, pvec)
        ok = np.abs(det) > _EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origins[:, None, :] - b0[None, :, :]
        u = np.einsum("ntj,ntj->nt", tvec, pvec) * inv
        qvec = np.cross(tvec, b1[None, :, :])
        v = np.einsum("nj,ntj->nt", directions, qvec) * inv
        t = np.einsum("tj,ntj->nt", b2, qvec) * inv
        hit = ok & (u >= -1e-10) & (v >= -1e-10) & (u + v <= 1.0 + 1e-10) & (t > t_min)
        t = np.where(hit, t, np.inf)
        idx = np.argmin(t, axis=1)
        tval = t[np.arange(n), idx]
        better = tval < best_t
        best_t[better] = tval[better]
        best_tri[better] = idx[better] + start
    return best_t, best_tri


def _common_origin_hits(origin, directions, corners, t_min, block):
    n = len(directions)
    v0 = corners[:, 0]
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    tvec = origin[None, :] - v0
    # u = d . (e2 x tvec), v = d . (tvec x e1), det = d . (e2 x e1),
    # t = (e2 . (tvec x e1)) / det -- all per-triangle except the ray factor.
    cross_u = np.cross(e2, tvec)
    cross_v = np.cross(tvec, e1)
    cross_d = np.cross(e2, e1)
    s_num = np.einsum("tj,tj->t", e2, cross_v)

    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    for start in range(0, n, block):
        sl = slice(start, min(start + block, n))
        D = directions[sl]
        det = D @ cross_d.T
        ok = np.abs(det) > _EPS
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        u = (D @ cross_u.T) * inv
        v = (D @ cross_v.T) * inv
        t = s_num[None, :] * inv
        hit = ok & (u >= -1e-10) & (v >= -1e-10) & (u + v <= 1.0 + 1e-10) & (t > t_min)
        t = np.where(hit, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(t.shape[0])
        tval = t[rows, idx]
        found = np.isfinite(tval)
        best_t[sl] = np.where(found, tval, np.inf)
        best_tri[sl] = np.where(found, idx, -1)
    return best_t, best_tri


def point_triangle_distances(points: np.ndarray, corners: np.ndarray, block: int = 256) -> np.ndarray:
    """Exact minimum distance from each point to a triangle soup."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    best = np.full(len(points), np.inf)
    for start in range(0, len(corners), block):
        tri = corners[start : start + block]
        d = _points_to_tris(points, tri)
        np.minimum(best, d.min(axis=1), out=best)
    return best


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    den = np.where(np.abs(den) < _EPS, _EPS, den)
    return num / den


def _points_to_tris(points: np.ndarray, tri: np.ndarray) -> np.ndarray:
    """(N, T) exact distances via Ericson's closest-point-on-triangle cases."""
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ab = b - a
    ac = c - a
    bc = c - b
    ap = points[:, None, :] - a[None, :, :]
    bp = points[:, None, :] - b[None, :, :]
    cp = points[:, None, :] - c[None, :, :]
    d1 = np.einsum("tj,ntj->nt", ab, ap)
    d2 = np.einsum("tj,ntj->nt", ac, ap)
    d3 = np.einsum("tj,ntj->nt", ab, bp)
    d4 = np.einsum("tj,ntj->nt", ac, bp)
    d5 = np.einsum("tj,ntj->nt", ab, cp)
    d6 = np.einsum("tj,ntj->nt", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # Later assignments win, so evaluate cases in reverse precedence: the
    # interior projection first, vertex regions last.
    v = _safe_div(vb, va + vb + vc)
    w = _safe_div(vc, va + vb + vc)
    closest = a[None, :, :] + v[..., None] * ab[None, :, :] + w[..., None] * ac[None, :, :]

    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)  # edge BC
    t = np.clip(_safe_div(d4 - d3, (d4 - d3) + (d5 - d6)), 0.0, 1.0)
    closest = np.where(m[..., None], b[None, :, :] + t[..., None] * bc[None, :, :], closest)

    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)  # edge AC
    t = np.clip(_safe_div(d2, d2 - d6), 0.0, 1.0)
    closest = np.where(m[..., None], a[None, :, :] + t[..., None] * ac[None, :, :], closest)

    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)  # edge AB
    t = np.clip(_safe_div(d1, d1 - d3), 0.0, 1.0)
    closest = np.where(m[..., None], a[None, :, :] + t[..., None] * ab[None, :, :], closest)

    m = (d6 >= 0) & (d5 <= d6)  # vertex C
    closest = np.where(m[..., None], np.broadcast_to(c[None, :, :], closest.shape), closest)
    m = (d3 >= 0) & (d4 <= d3)  # vertex B
    closest = np.where(m[..., None], np.broadcast_to(b[None, :, :], closest.shape), closest)
    m = (d1 <= 0) & (d2 <= 0)  # vertex A
    closest = np.where(m[..., None], np.broadcast_to(a[None, :, :], closest.shape), closest)
    return np.linalg.norm(points[:, None, :] - closest, axis=2)


def points_in_convex_mesh(points: np.ndarray, mesh: TriangleMesh, tol: float = 0.0) -> np.ndarray:
    """Containment test valid for convex meshes only (all face-plane check)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    anchors = mesh.vertices[mesh.triangles[:, 0]]
    inside = np.ones(len(points), dtype=bool)
    for start in range(0, len(anchors), 512):
        sl = slice(start, start + 512)
        side = np.einsum("tj,ntj->nt", mesh.normals[sl], points[:, None, :] - anchors[None, sl])
        inside &= np.all(side <= tol, axis=1)
    return inside
