from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (N, 3)
    triangles: np.ndarray  # (M, 3) int
    vertex_colors: np.ndarray | None = None  # (N, 3) in [0, 1]
    vertex_normals: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise IndexError("triangle index out of range")
        if self.vertex_colors is None:
            self.vertex_colors = np.full((len(self.vertices), 3), 0.7)
        self.vertex_colors = np.asarray(self.vertex_colors, dtype=np.float64).reshape(-1, 3)
        if self.vertex_normals is None:
            self.vertex_normals = compute_vertex_normals(self.vertices, self.triangles)
        self.vertex_normals = np.asarray(self.vertex_normals, dtype=np.float64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def transformed(self, rot: np.ndarray, trans: np.ndarray | None = None) -> "TriangleMesh":
        trans = np.zeros(3) if trans is None else trans
        return TriangleMesh(self.vertices @ rot.T + trans, self.triangles.copy(),
                            self.vertex_colors.copy(), self.vertex_normals @ rot.T)


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    n = np.zeros_like(vertices, dtype=np.float64)
    if len(triangles):
        v = vertices[triangles]
        fn = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])  # area-weighted
        for k in range(3):
            np.add.at(n, triangles[:, k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    out = np.where(norm > 1e-12, n / np.maximum(norm, 1e-12), 0.0)
    out[norm[:, 0] <= 1e-12] = (0.0, 0.0, 1.0)
    return out


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    verts, tris, cols, nors = [], [], [], []
    off = 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        cols.append(m.vertex_colors)
        nors.append(m.vertex_normals)
        off += m.n_vertices
    if not meshes:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.concatenate(verts), np.concatenate(tris), np.concatenate(cols), np.concatenate(nors))


@dataclass
class PointCloud:
    positions: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3) unit


def pca_normals(points: np.ndarray, k: int = 8, support: np.ndarray | None = None) -> np.ndarray:
    """Unit normals (sign arbitrary) from the smallest principal axis of each point's k nearest
    neighbours in ``support`` (default: the points themselves)."""
    pts = np.asarray(points, dtype=np.float64)
    sup = pts if support is None else np.asarray(support, dtype=np.float64)
    if len(sup) < 3:
        raise ValueError("need at least 3 support points")
    _, idx = cKDTree(sup).query(pts, k=min(k, len(sup)))
    nb = sup[idx]
    d = nb - nb.mean(axis=1, keepdims=True)
    _, vecs = np.linalg.eigh(np.einsum("nki,nkj->nij", d, d))
    return vecs[:, :, 0]


def sample_surface_points(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform samples with interpolated unit normals."""
    if n <= 0:
        raise ValueError("n must be positive")
    if mesh.is_empty():
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    face = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    bary = np.stack([1 - s, s * (1 - r2), s * r2], axis=1)
    tri = mesh.triangles[face]
    pos = np.einsum("nk,nkd->nd", bary, mesh.vertices[tri])
    nor = np.einsum("nk,nkd->nd", bary, mesh.vertex_normals[tri])
    length = np.linalg.norm(nor, axis=1, keepdims=True)
    v = mesh.vertices[tri]
    face_n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    face_n /= np.maximum(np.linalg.norm(face_n, axis=1, keepdims=True), 1e-12)
    nor = np.where(length > 1e-8, nor / np.maximum(length, 1e-8), face_n)
    return PointCloud(pos, nor)


# -- OBJ subset ---------------------------------------------------------------

def save_obj(mesh: TriangleMesh, path) -> None:
    lines = []
    for p, c in zip(mesh.vertices, mesh.vertex_colors):
        lines.append("v %.9g %.9g %.9g %.6g %.6g %.6g" % (*p, *c))
    for nrm in mesh.vertex_normals:
        lines.append("vn %.9g %.9g %.9g" % tuple(nrm))
    for a, b, c in mesh.triangles + 1:
        lines.append(f"f {a}//{a} {b}//{b} {c}//{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path) -> TriangleMesh:
    verts, cols, nors, tris = [], [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            vals = [float(x) for x in parts[1:]]
            verts.append(vals[:3])
            cols.append(vals[3:6] if len(vals) >= 6 else [0.7, 0.7, 0.7])
        elif parts[0] == "vn":
            nors.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(tok.split("/")[0]) - 1 for tok in parts[1:4]])
    normals = np.array(nors) if len(nors) == len(verts) and nors else None
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3),
                        np.array(cols).reshape(-1, 3), normals)
