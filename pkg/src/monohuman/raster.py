"""Z-buffered software rasterizer for vertex-coloured triangle meshes.

All triangles are processed at once: every (triangle, candidate pixel) pair
inside the triangle's pixel bounding box is expanded into flat arrays, tested
with screen-space edge functions, and resolved per pixel by depth with the
lower triangle index winning exact ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraPose
from .mesh import TriangleMesh

MODES = ("rgb", "normal", "mask", "depth")
NEAR = 0.01


@dataclass
class RenderTarget:
    mode: str
    pixels: np.ndarray  # (H, W, C) float32
    background: float | tuple

    @property
    def mask(self) -> np.ndarray:
        return self.pixels[..., 0] if self.mode == "mask" else None


@dataclass
class Fragments:
    """Per-pixel visible-surface record from one rasterization pass."""

    covered: np.ndarray  # (H, W) bool
    tri: np.ndarray  # (H, W) int, -1 where empty
    bary: np.ndarray  # (H, W, 3) perspective-correct barycentrics
    depth: np.ndarray  # (H, W) camera z, 0 where empty


def rasterize_fragments(mesh: TriangleMesh, cam: CameraPose) -> Fragments:
    h, w = cam.height, cam.width
    covered = np.zeros((h, w), bool)
    tri_buf = np.full((h, w), -1, np.int64)
    bary_buf = np.zeros((h, w, 3))
    depth = np.zeros((h, w))
    if mesh.is_empty():
        return Fragments(covered, tri_buf, bary_buf, depth)

    pc = cam.world_to_camera(mesh.vertices)
    z = pc[:, 2]
    uv = np.zeros((len(pc), 2))
    ok_v = z > NEAR
    uv[ok_v] = cam.project(pc[ok_v])
    tris = mesh.triangles
    ok = ok_v[tris].all(axis=1)
    tid = np.nonzero(ok)[0]
    if len(tid) == 0:
        return Fragments(covered, tri_buf, bary_buf, depth)
    t = tris[tid]
    p0, p1, p2 = uv[t[:, 0]], uv[t[:, 1]], uv[t[:, 2]]
    area = (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    nondeg = np.abs(area) > 1e-12
    lo = np.minimum(np.minimum(p0, p1), p2)
    hi = np.maximum(np.maximum(p0, p1), p2)
    x0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, w).astype(np.int64)
    x1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, h).astype(np.int64)
    y1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, h - 1).astype(np.int64)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = np.where(nondeg, bw * bh, 0)
    total = int(counts.sum())
    if total == 0:
        return Fragments(covered, tri_buf, bary_buf, depth)

    k = np.repeat(np.arange(len(tid)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    off = np.arange(total) - start
    px = x0[k] + off % bw[k]
    py = y0[k] + off // bw[k]
    sx, sy = px + 0.5, py + 0.5

    a, b, c = p0[k], p1[k], p2[k]
    ar = area[k]
    l0 = ((b[:, 0] - sx) * (c[:, 1] - sy) - (b[:, 1] - sy) * (c[:, 0] - sx)) / ar
    l1 = ((c[:, 0] - sx) * (a[:, 1] - sy) - (c[:, 1] - sy) * (a[:, 0] - sx)) / ar
    l2 = 1.0 - l0 - l1
    inside = (l0 >= 0) & (l1 >= 0) & (l2 >= 0)
    if not inside.any():
        return Fragments(covered, tri_buf, bary_buf, depth)
    k, px, py = k[inside], px[inside], py[inside]
    lam = np.stack([l0[inside], l1[inside], l2[inside]], axis=1)
    zt = z[t[k]]  # (P, 3)
    inv = lam / zt
    zint = 1.0 / inv.sum(axis=1)
    persp = inv * zint[:, None]

    pix = py * w + px
    tri_global = tid[k]
    order = np.lexsort((tri_global, zint, pix))
    pix_s = pix[order]
    first = np.ones(len(order), bool)
    first[1:] = pix_s[1:] != pix_s[:-1]
    win = order[first]
    flat = pix[win]
    covered.reshape(-1)[flat] = True
    tri_buf.reshape(-1)[flat] = tri_global[win]
    bary_buf.reshape(-1, 3)[flat] = persp[win]
    depth.reshape(-1)[flat] = zint[win]
    return Fragments(covered, tri_buf, bary_buf, depth)


def encode_normals(normals_world: np.ndarray, cam: CameraPose) -> np.ndarray:
    """World normals -> camera-space (x right, y up, z toward viewer) mapped to [0, 1]."""
    n = normals_world @ cam.rotation.T
    n = n * np.array([1.0, -1.0, -1.0])
    n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-12)
    return (n + 1.0) * 0.5


def rasterize(mesh: TriangleMesh, cam: CameraPose, mode: str = "rgb", background=1.0,
              fragments: Fragments | None = None) -> RenderTarget:
    if mode not in MODES:
        raise ValueError(f"unsupported mode '{mode}'")
    frag = fragments if fragments is not None else rasterize_fragments(mesh, cam)
    h, w = cam.height, cam.width
    cov = frag.covered
    if mode == "mask":
        return RenderTarget(mode, cov.astype(np.float32)[..., None], 0.0)
    if mode == "depth":
        return RenderTarget(mode, frag.depth.astype(np.float32)[..., None], 0.0)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    out = np.empty((h, w, 3))
    out[:] = bg
    if cov.any():
        tri = mesh.triangles[frag.tri[cov]]
        lam = frag.bary[cov]
        if mode == "rgb":
            out[cov] = np.einsum("pk,pkc->pc", lam, mesh.vertex_colors[tri])
        else:
            nrm = np.einsum("pk,pkc->pc", lam, mesh.vertex_normals[tri])
            out[cov] = encode_normals(nrm, cam)
    return RenderTarget(mode, out.astype(np.float32), tuple(bg))


def render_all(mesh: TriangleMesh, cam: CameraPose, background=1.0) -> dict[str, np.ndarray]:
    """RGB, normal, mask and depth from a single rasterization pass."""
    frag = rasterize_fragments(mesh, cam)
    return {m: rasterize(mesh, cam, m, background, fragments=frag).pixels for m in MODES}
