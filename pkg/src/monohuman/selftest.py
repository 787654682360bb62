"""Built-in checks run by the ``selftest`` command.

Each group returns a list of ``CheckResult`` rows. Gradient checks compare
analytic gradients against central differences; the oracle groups compare
library results against hand-evaluated or brute-force values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

SMOOTH_TOL = 1e-3
CLAMPED_TOL = 1e-2
SPLAT_TOL = 2e-2
# ops with kinks or clamps are checked at the looser tolerance
CLAMPED_OPS = frozenset({"relu"})


@dataclass
class CheckResult:
    group: str
    name: str
    value: float
    tol: float
    ok: bool

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.group}/{self.name}: {self.value:.3g} (tol {self.tol:g})"


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return x


def op_cases(seed: int = 0) -> dict[str, tuple]:
    """op id -> (function of input Tensors, list of input arrays)."""
    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)
    pos = lambda *s: rng.uniform(0.5, 2.0, s)
    return {
        "add": (lambda a, b: T.add(a, b), [r(3, 4), r(4)]),
        "sub": (lambda a, b: T.sub(a, b), [r(3, 4), r(3, 1)]),
        "mul": (lambda a, b: T.mul(a, b), [r(2, 3), r(2, 3)]),
        "div": (lambda a, b: T.div(a, b), [r(2, 3), pos(2, 3)]),
        "scalar-mul": (lambda a: T.scalar_mul(a, 1.7), [r(5)]),
        "matmul": (lambda a, b: T.matmul(a, b), [r(2, 3, 4), r(2, 4, 2)]),
        "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2, pad=1), [r(1, 2, 5, 5), r(3, 2, 3, 3), r(3)]),
        "transposed-conv2d": (lambda x, w, b: T.conv_transpose2d(x, w, b, stride=2, pad=1),
                              [r(1, 2, 3, 3), r(2, 3, 3, 3), r(3)]),
        "relu": (T.relu, [_away_from_zero(rng, (4, 5))]),
        "sigmoid": (T.sigmoid, [r(4, 3)]),
        "tanh": (T.tanh, [r(4, 3)]),
        "softplus": (T.softplus, [r(4, 3) * 3]),
        "exp": (T.exp, [r(3, 3)]),
        "log": (T.log, [pos(3, 3)]),
        "square": (T.square, [r(3, 3)]),
        "sqrt": (T.sqrt, [pos(3, 3)]),
        "sum": (lambda a: T.sum_(a, axis=1), [r(3, 4)]),
        "mean": (lambda a: T.mean(a, axis=0, keepdims=True), [r(3, 4)]),
        "softmax": (lambda a: T.softmax(a, axis=-1), [r(3, 5)]),
        "group-norm": (lambda x, g, b: T.group_norm(x, g, b, groups=2), [r(2, 4, 3, 3), pos(4), r(4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [r(2, 3), r(2, 2)]),
        "slice": (lambda a: T.slice_(a, (slice(None), slice(1, 3))), [r(3, 4)]),
        "reshape": (lambda a: T.reshape(a, (6, 2)), [r(3, 4)]),
        "transpose": (lambda a: T.transpose(a, (1, 0, 2)), [r(2, 3, 2)]),
        "nearest-upsample": (T.upsample2x, [r(1, 2, 3, 3)]),
        "avgpool": (T.avgpool2x, [r(1, 2, 4, 4)]),
        "l2-norm": (lambda a: T.l2_norm(a, axis=1), [r(2, 3, 2, 2)]),
    }


def _weighted(fn, seed):
    """Scalarize an op's output with fixed random weights so every output element matters."""
    cache = {}

    def f(*xs):
        out = fn(*xs)
        if "w" not in cache:
            cache["w"] = np.random.default_rng(seed).standard_normal(out.shape)
        return T.sum_(out * Tensor(cache["w"], dtype=np.float64))

    return f


def check_ops(seed: int = 0) -> list[CheckResult]:
    cases = op_cases(seed)
    missing = sorted(set(T.OPS) - set(cases))
    rows = [CheckResult("ops", f"missing:{m}", 1.0, 0.0, False) for m in missing]
    for name, (fn, inputs) in cases.items():
        tol = CLAMPED_TOL if name in CLAMPED_OPS else SMOOTH_TOL
        err = T.grad_check(_weighted(fn, seed + 1), inputs, h=1e-5)
        rows.append(CheckResult("ops", name, err, tol, err < tol))
    return rows


def check_splat(sizes=(1, 4, 8), seed: int = 0, res: int = 16) -> list[CheckResult]:
    from .camera import orbit_camera
    from .splat import gradcheck_scene, splat_gradcheck

    cam = orbit_camera(0.0, 0.0, 1.5, 49.0, res, res)
    rows = []
    for n in sizes:
        err = splat_gradcheck(gradcheck_scene(n, seed), cam, w_min=1e-10)
        rows.append(CheckResult("splat-grad", f"{n}-gaussians", err, SPLAT_TOL, err < SPLAT_TOL))
    return rows


def check_compositing() -> list[CheckResult]:
    from .camera import orbit_camera
    from .gaussians import GaussianSet
    from .splat import splat_render

    cam = orbit_camera(0.0, 0.0, 3.0, 49.0, 33, 33)
    rows = []
    one = GaussianSet.from_parts([[0, 0, 0]], [[0.5] * 3], [[1, 0, 0, 0]], [0.999], [[1, 0, 0]])
    img = splat_render(one, cam, (0, 0, 0))
    err = float(np.abs(img.color.data[16, 16] - np.array([0.999, 0, 0])).max())
    rows.append(CheckResult("compositing", "single", err, 1e-2, err < 1e-2))
    a, b = np.array([0.2, 0.9, 0.1]), np.array([0.7, 0.1, 0.6])
    two = GaussianSet.from_parts([[0, 0, 0.5], [0, 0, -0.5]], [[0.5] * 3] * 2, [[1, 0, 0, 0]] * 2, [0.5, 0.5], [a, b])
    img = splat_render(two, cam, (0, 0, 0))
    # camera looks down -Z from +Z, so z = +0.5 is nearer
    want = 0.5 * a + 0.25 * b
    err = float(np.abs(img.color.data[16, 16] - want).max())
    rows.append(CheckResult("compositing", "two", err, 1e-2, err < 1e-2))
    return rows


def check_lbs() -> list[CheckResult]:
    from scipy.spatial.transform import Rotation

    from .body import PoseParams, build_rig, forward_kinematics, lbs_apply, make_humanoid, lbs_deform

    rows = []
    body = make_humanoid()
    err = float(np.abs(lbs_deform(body, PoseParams()).vertices - body.mesh.vertices).max())
    rows.append(CheckResult("lbs", "identity", err, 1e-5, err < 1e-5))

    rig = build_rig()
    pose = PoseParams()
    rot = pose.rotations.copy()
    rot[4] = [0.0, 0.0, 0.8]
    pose = PoseParams(rot)
    rots, trans = forward_kinematics(rig, pose)
    pts = rig.heads[4] + np.array([[0.1, 0.02, 0.0], [0.2, -0.03, 0.01]])
    w = np.zeros((2, rig.n_bones))
    w[:, 4] = 1.0
    got = lbs_apply(pts, w, rots, trans)
    rmat = Rotation.from_rotvec([0.0, 0.0, 0.8]).as_matrix()
    want = (pts - rig.heads[4]) @ rmat.T + rig.heads[4]
    err = float(np.abs(got - want).max())
    rows.append(CheckResult("lbs", "rigid", err, 1e-6, err < 1e-6))

    t1, t2 = np.array([0.1, 0.0, 0.0]), np.array([0.0, 0.3, 0.0])
    rots2 = np.stack([np.eye(3)] * 2)
    trans2 = np.stack([t1, t2])
    v = np.array([[0.3, -0.2, 0.05]])
    got = lbs_apply(v, np.array([[0.5, 0.5]]), rots2, trans2)
    err = float(np.abs(got - (v + 0.5 * (t1 + t2))).max())
    rows.append(CheckResult("lbs", "two-bone", err, 1e-6, err < 1e-6))
    return rows


def check_metrics(seed: int = 0) -> list[CheckResult]:
    from .mesh import PointCloud
    from .metrics import PSNR_CAP, chamfer, fscore, normal_consistency, psnr, ssim

    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-0.1, 0.1, (40, 3)), rng.uniform(-0.1, 0.1, (50, 3))
    d = np.sqrt(((a[:, None] - b[None]) ** 2).sum(-1))
    p2s, s2p = chamfer(a, b)
    err = max(abs(p2s - d.min(1).mean() * 100), abs(s2p - d.min(0).mean() * 100))
    rows = [CheckResult("metrics", "chamfer", err, 1e-12, err < 1e-12)]
    tau = 3.0
    pr, rc = (d.min(1) < tau / 100).mean(), (d.min(0) < tau / 100).mean()
    want = 0.0 if pr + rc == 0 else 200 * pr * rc / (pr + rc)
    err = abs(fscore(a, b, tau) - want)
    rows.append(CheckResult("metrics", "fscore", err, 1e-12, err < 1e-12))
    na = rng.normal(size=a.shape)
    nb = rng.normal(size=b.shape)
    na /= np.linalg.norm(na, axis=1, keepdims=True)
    nb /= np.linalg.norm(nb, axis=1, keepdims=True)
    dots = np.abs(na @ nb.T)
    want = 0.5 * (dots[np.arange(len(a)), d.argmin(1)].mean() + dots[d.argmin(0), np.arange(len(b))].mean())
    err = abs(normal_consistency(PointCloud(a, na), PointCloud(b, nb)) - want)
    rows.append(CheckResult("metrics", "normal-consistency", err, 1e-12, err < 1e-12))
    img = rng.uniform(0, 1, (16, 16, 3))
    rows.append(CheckResult("metrics", "psnr-identical", abs(psnr(img, img) - PSNR_CAP), 0.0,
                            psnr(img, img) == PSNR_CAP))
    z, o = np.zeros((16, 16, 3)), np.ones((16, 16, 3))
    rows.append(CheckResult("metrics", "psnr-0-vs-1", abs(psnr(z, o)), 0.0, psnr(z, o) == 0.0))
    rows.append(CheckResult("metrics", "ssim-identical", abs(ssim(img, img) - 1.0), 1e-12,
                            abs(ssim(img, img) - 1.0) < 1e-12))
    return rows


GROUPS = {
    "ops": check_ops,
    "splat-grad": check_splat,
    "compositing": check_compositing,
    "lbs": check_lbs,
    "metrics": check_metrics,
}


def run_all(groups=None) -> dict[str, list[CheckResult]]:
    return {g: GROUPS[g]() for g in (groups or GROUPS)}
