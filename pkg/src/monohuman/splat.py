"""Differentiable Gaussian splatting.

Projection (centre, quaternion, scale -> pixel mean and inverse image
covariance) is written with ordinary tensor ops so autodiff handles it.
Front-to-back compositing is a single graph node with a hand-written
backward pass.

Each Gaussian touches the pixels within the radius where its weight could
still reach the 1/255 contribution cutoff, so nothing is dropped by the
footprint itself that the cutoff would have kept.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .camera import CameraPose
from .gaussians import COV2D_REG, NEAR, GaussianSet
from .tensor import Tensor

T_MIN = 1e-4
W_MIN = 1.0 / 255.0


@dataclass
class SplatImage:
    color: Tensor  # (H, W, 3)
    alpha: Tensor  # (H, W)
    camera: CameraPose


def _quat_rotmat(q: Tensor) -> Tensor:
    """(G, 4) raw quaternions -> (G, 3, 3) rotations, normalising inside the graph."""
    qn = q / T.sqrt(T.sum_(T.square(q), axis=1, keepdims=True))
    w, x, y, z = (qn[:, i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    ents = [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)]
    return T.stack(ents, axis=1).reshape(-1, 3, 3)


def project_tensors(params: Tensor, cam: CameraPose, reg: float = COV2D_REG):
    """Graph-tracked projection of (G, 14) parameters.

    Returns (mean2d (G,2), conic (G,3) = [a, b, c] of the inverse covariance,
    cov2d (G,2,2) numpy, depth numpy).
    """
    dt = params.dtype
    rot = np.asarray(cam.rotation, dtype=dt)
    tvec = np.asarray(cam.translation, dtype=dt)
    f = float(cam.focal)
    cx, cy = cam.center
    xyz = params[:, 0:3]
    tc = T.matmul(xyz, Tensor(rot.T, dtype=dt)) + Tensor(tvec, dtype=dt)
    tx, ty, tz = tc[:, 0], tc[:, 1], tc[:, 2]
    inv_z = 1.0 / tz
    u = tx * inv_z * f + cx
    v = ty * inv_z * f + cy
    mean2d = T.stack([u, v], axis=1)

    r = _quat_rotmat(params[:, 6:10])
    m = r * params[:, 3:6].reshape(-1, 1, 3)
    zero = tz * 0.0
    jac = T.stack([f * inv_z, zero, -f * tx * inv_z * inv_z,
                   zero, f * inv_z, -f * ty * inv_z * inv_z], axis=1).reshape(-1, 2, 3)
    tw = T.matmul(jac, Tensor(rot, dtype=dt))
    a_mat = T.matmul(tw, m)
    cov = T.matmul(a_mat, a_mat.transpose(0, 2, 1))
    a = cov[:, 0, 0] + reg
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + reg
    det = a * c - b * b
    conic = T.stack([c / det, -b / det, a / det], axis=1)
    return mean2d, conic, cov.data + reg * np.eye(2, dtype=dt), tz.data


def _footprints(mean2d, cov2d, opac, valid, h, w, w_min):
    lam_max = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1]) + np.sqrt(
        np.maximum(0.25 * (cov2d[:, 0, 0] - cov2d[:, 1, 1]) ** 2 + cov2d[:, 0, 1] ** 2, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rad = np.sqrt(np.maximum(2.0 * np.log(np.maximum(opac, 1e-30) / w_min), 0.0) * lam_max)
    keep = valid & (opac > w_min)
    x0 = np.clip(np.ceil(mean2d[:, 0] - rad - 0.5), 0, w).astype(np.int64)
    x1 = np.clip(np.floor(mean2d[:, 0] + rad - 0.5), -1, w - 1).astype(np.int64)
    y0 = np.clip(np.ceil(mean2d[:, 1] - rad - 0.5), 0, h).astype(np.int64)
    y1 = np.clip(np.floor(mean2d[:, 1] + rad - 0.5), -1, h - 1).astype(np.int64)
    bw = np.maximum(x1 - x0 + 1, 0)
    bh = np.maximum(y1 - y0 + 1, 0)
    counts = np.where(keep, bw * bh, 0)
    return x0, y0, bw, counts


def composite(mean2d: Tensor, conic: Tensor, opacity: Tensor, color: Tensor, depth: np.ndarray,
              cov2d: np.ndarray, valid: np.ndarray, h: int, w: int, background,
              t_min: float = T_MIN, w_min: float = W_MIN) -> tuple[Tensor, Tensor]:
    """Front-to-back alpha compositing; returns (colour (H,W,3), alpha (H,W))."""
    dt = mean2d.dtype
    g = mean2d.shape[0]
    bg = np.broadcast_to(np.asarray(background, dtype=dt), (3,)).copy()
    mu, cn, op, col = mean2d.data, conic.data, opacity.data.reshape(-1), color.data
    npix = h * w

    x0, y0, bw, counts = _footprints(mu, cov2d, op, valid, h, w, w_min)
    total = int(counts.sum())
    gid = np.repeat(np.arange(g), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    off = np.arange(total) - start
    px = x0[gid] + off % np.maximum(bw[gid], 1)
    py = y0[gid] + off // np.maximum(bw[gid], 1)
    dx = px + 0.5 - mu[gid, 0]
    dy = py + 0.5 - mu[gid, 1]
    power = -0.5 * (cn[gid, 0] * dx * dx + 2 * cn[gid, 1] * dx * dy + cn[gid, 2] * dy * dy)
    gauss = np.exp(np.minimum(power, 0.0))
    wt = op[gid] * gauss
    sel = (wt >= w_min) & (power <= 0)
    gid, px, py, dx, dy, gauss, wt = (a[sel] for a in (gid, px, py, dx, dy, gauss, wt))

    rank = np.empty(g, np.int64)
    rank[np.argsort(depth, kind="stable")] = np.arange(g)
    pix = py * w + px
    order = np.argsort(pix * g + rank[gid], kind="stable")
    gid, pix, dx, dy, gauss, wt = (a[order] for a in (gid, pix, dx, dy, gauss, wt))

    n = len(gid)
    upix, seg_start, seg_count = np.unique(pix, return_index=True, return_counts=True)
    seg = np.repeat(np.arange(len(upix)), seg_count)

    def seg_cumsum(x):
        """Inclusive prefix sums restarted at every pixel segment."""
        cs = np.cumsum(x, axis=0)
        base = cs[seg_start] - x[seg_start]
        return cs - base[seg]

    # transmittance in log space, evaluated in float64
    wt64 = wt.astype(np.float64)
    log_om = np.log1p(-np.minimum(wt64, 1.0 - 1e-12))
    t_excl = np.exp(seg_cumsum(log_om) - log_om)
    live = t_excl >= t_min
    wd = np.where(live, wt64, 0.0)
    log_om = np.where(live, log_om, 0.0)
    t_final = np.exp(np.bincount(seg, log_om, minlength=len(upix)))
    contrib = t_excl * wd
    cd = col[gid].astype(np.float64)
    bg64 = bg.astype(np.float64)

    out_c = np.empty((npix, 3), dt)
    out_c[:] = bg
    out_a = np.zeros(npix, dt)
    if n:
        acc = np.stack([np.bincount(seg, contrib * cd[:, i], minlength=len(upix)) for i in range(3)], axis=1)
        out_c[upix] = acc + t_final[:, None] * bg64
        out_a[upix] = 1.0 - t_final

    def bw_fn(gcol, galpha):
        if n == 0:
            return (np.zeros((g, 2), dt), np.zeros((g, 3), dt), np.zeros(opacity.shape, dt), np.zeros((g, 3), dt))
        gc = gcol.reshape(npix, 3)[upix].astype(np.float64)[seg]
        ga = galpha.reshape(npix)[upix].astype(np.float64)[seg]
        # what lies behind each pair, seen through that pair's transmittance
        t_next = t_excl * (1.0 - wd)
        front = contrib[:, None] * cd
        total = np.stack([np.bincount(seg, front[:, i], minlength=len(upix)) for i in range(3)], axis=1)
        behind = total[seg] - seg_cumsum(front) + t_final[seg, None] * bg64
        safe = np.where(t_next > 0, t_next, 1.0)
        rest = np.where((t_next > 0)[:, None], behind / safe[:, None], 0.0)
        vis = np.where(t_next > 0, t_final[seg] / safe, 0.0)
        dw = t_excl * (((cd - rest) * gc).sum(axis=1) + vis * ga)
        dw = np.where(live, dw, 0.0)
        dcol_pair = contrib[:, None] * gc
        g_op = np.bincount(gid, dw * gauss, minlength=g)
        dpower = dw * wt
        dmu_x = np.bincount(gid, dpower * (cn[gid, 0] * dx + cn[gid, 1] * dy), minlength=g)
        dmu_y = np.bincount(gid, dpower * (cn[gid, 1] * dx + cn[gid, 2] * dy), minlength=g)
        dcn = np.stack([np.bincount(gid, dpower * (-0.5 * dx * dx), minlength=g),
                        np.bincount(gid, dpower * (-dx * dy), minlength=g),
                        np.bincount(gid, dpower * (-0.5 * dy * dy), minlength=g)], axis=1)
        dcol = np.stack([np.bincount(gid, dcol_pair[:, i], minlength=g) for i in range(3)], axis=1)
        return (np.stack([dmu_x, dmu_y], axis=1).astype(dt), dcn.astype(dt),
                g_op.reshape(opacity.shape).astype(dt), dcol.astype(dt))

    # the two outputs share one graph node: colour and alpha are packed together
    packed = np.concatenate([out_c, out_a[:, None]], axis=1).reshape(h, w, 4)

    def packed_bw(gp):
        return bw_fn(gp[..., :3], gp[..., 3])

    node = T._make("splat-composite", packed, (mean2d, conic, opacity, color), packed_bw)
    return node[:, :, 0:3], node[:, :, 3]


def splat_render(gs: GaussianSet, cam: CameraPose, background=(1.0, 1.0, 1.0),
                 t_min: float = T_MIN, w_min: float = W_MIN, reg: float = COV2D_REG) -> SplatImage:
    params = gs.params
    h, w = cam.height, cam.width
    dt = params.dtype
    if len(gs) == 0:
        col = np.empty((h, w, 3), dt)
        col[:] = np.asarray(background, dtype=dt)
        return SplatImage(Tensor(col, dtype=dt), Tensor(np.zeros((h, w), dt), dtype=dt), cam)
    if not np.isfinite(params.data).all():
        raise ValueError("non-finite Gaussian parameters")
    depth_all = cam.world_to_camera(params.data[:, 0:3].astype(np.float64))[:, 2]
    idx = np.nonzero(depth_all > NEAR)[0]
    if len(idx) < len(gs):
        params = params[idx]
    if len(idx) == 0:
        return splat_render(GaussianSet(np.zeros((0, 14), dt)), cam, background)
    mean2d, conic, cov2d, depth = project_tensors(params, cam, reg)
    valid = np.ones(len(idx), bool)
    color, alpha = composite(mean2d, conic, params[:, 10], params[:, 11:14], depth, cov2d, valid,
                             h, w, background, t_min, w_min)
    return SplatImage(color, alpha, cam)


def splat_gradcheck(gs: GaussianSet, cam: CameraPose, h: float = 1e-3, background=(0.0, 0.0, 0.0),
                    weights: np.ndarray | None = None, w_min: float = W_MIN, t_min: float = T_MIN) -> float:
    """Max relative error of analytic vs central-difference grads of a pixel-sum loss.

    ``weights`` optionally reweights pixels (H, W, 4: colour channels + alpha).
    """
    wgt = np.ones((cam.height, cam.width, 4)) if weights is None else np.asarray(weights, np.float64)

    def loss(p):
        img = splat_render(GaussianSet(p), cam, background, t_min=t_min, w_min=w_min)
        return T.sum_(img.color * Tensor(wgt[..., :3], dtype=np.float64)) + \
            T.sum_(img.alpha * Tensor(wgt[..., 3], dtype=np.float64))

    return T.grad_check(loss, [gs.array.astype(np.float64)], h=h)


def gradcheck_scene(n: int, seed: int, spread: float = 0.12) -> GaussianSet:
    """Seeded overlapping Gaussians near the origin with depth gaps well above FD steps."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-spread, spread, (n, 2))
    z = np.linspace(-0.2, 0.2, n) if n > 1 else np.zeros(1)
    z = rng.permutation(z) + rng.uniform(-0.01, 0.01, n)
    xyz = np.column_stack([xy, z])
    scale = rng.uniform(0.03, 0.08, (n, 3))
    quat = rng.normal(size=(n, 4))
    opacity = rng.uniform(0.3, 0.8, n)
    color = rng.uniform(0.0, 1.0, (n, 3))
    return GaussianSet.from_parts(xyz, scale, quat, opacity, color)


def camera_normal_render(gs: GaussianSet, cam: CameraPose, background=1.0, **kw) -> SplatImage:
    """Render Gaussians whose colours encode world-space normals as a camera-space normal map.

    Compositing is linear in colour, so the world-to-camera change of the
    encoded normal is applied once to the premultiplied composite.
    """
    img = splat_render(gs, cam, (0.0, 0.0, 0.0), **kw)
    dt = img.color.dtype
    m = np.diag([1.0, -1.0, -1.0]) @ cam.rotation  # GL camera axes from world axes
    t = 0.5 * (1.0 - m.sum(axis=1))
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    h, w = cam.height, cam.width
    flat = img.color.reshape(h * w, 3)
    a = img.alpha.reshape(h * w, 1)
    mapped = T.matmul(flat, Tensor(m.T.astype(dt))) + a * Tensor(t.astype(dt)) \
        + (1.0 - a) * Tensor(bg.astype(dt))
    return SplatImage(mapped.reshape(h, w, 3), img.alpha, cam)
