"""14-parameter 3D Gaussians: centre(3), scale(3), quaternion wxyz(4), opacity(1), colour(3)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .camera import CameraPose
from .tensor import Tensor

N_PARAMS = 14
SL_XYZ = slice(0, 3)
SL_SCALE = slice(3, 6)
SL_QUAT = slice(6, 10)
SL_OPACITY = slice(10, 11)
SL_COLOR = slice(11, 14)
MAGIC = b"SATGS1\0\0"
COV2D_REG = 0.3
NEAR = 0.01


class GaussianFileError(ValueError):
    pass


class GaussianSet:
    """A (G, 14) parameter block, optionally a graph-tracked Tensor."""

    def __init__(self, params):
        if not isinstance(params, Tensor):
            params = Tensor(np.asarray(params, dtype=np.float32).reshape(-1, N_PARAMS))
        if params.ndim != 2 or params.shape[1] != N_PARAMS:
            raise ValueError(f"expected (G, {N_PARAMS}) parameters, got {params.shape}")
        self.params = params

    def __len__(self) -> int:
        return self.params.shape[0]

    @property
    def count(self) -> int:
        return len(self)

    @property
    def array(self) -> np.ndarray:
        return self.params.data

    @property
    def xyz(self) -> np.ndarray:
        return self.array[:, SL_XYZ]

    @property
    def scale(self) -> np.ndarray:
        return self.array[:, SL_SCALE]

    @property
    def quat(self) -> np.ndarray:
        return self.array[:, SL_QUAT]

    @property
    def opacity(self) -> np.ndarray:
        return self.array[:, 10]

    @property
    def color(self) -> np.ndarray:
        return self.array[:, SL_COLOR]

    def detach(self) -> "GaussianSet":
        return GaussianSet(Tensor(self.array.copy()))

    def subset(self, idx) -> "GaussianSet":
        return GaussianSet(Tensor(self.array[idx]))

    def with_colors(self, colors: np.ndarray) -> "GaussianSet":
        arr = self.array.copy()
        arr[:, SL_COLOR] = colors
        return GaussianSet(Tensor(arr))

    def validate(self) -> None:
        a = self.array
        if not np.isfinite(a).all():
            raise ValueError("non-finite Gaussian parameters")
        if (a[:, SL_SCALE] <= 0).any():
            raise ValueError("non-positive scale")
        if ((a[:, 10] < 0) | (a[:, 10] > 1)).any():
            raise ValueError("opacity outside [0, 1]")
        if (np.linalg.norm(a[:, SL_QUAT], axis=1) == 0).any():
            raise ValueError("zero quaternion")

    @staticmethod
    def from_parts(xyz, scale, quat, opacity, color) -> "GaussianSet":
        arr = np.concatenate([np.reshape(xyz, (-1, 3)), np.reshape(scale, (-1, 3)), np.reshape(quat, (-1, 4)),
                              np.reshape(opacity, (-1, 1)), np.reshape(color, (-1, 3))], axis=1)
        return GaussianSet(arr)

    @staticmethod
    def concat(sets: list["GaussianSet"]) -> "GaussianSet":
        from .tensor import concat
        return GaussianSet(concat([s.params for s in sets], axis=0))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero quaternion")
    w, x, y, z = np.moveaxis(q / n, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def covariance_3d(scale, quat) -> np.ndarray:
    """R diag(s^2) R^T for one Gaussian or a batch."""
    r = quat_to_rotmat(quat)
    m = r * np.asarray(scale, dtype=np.float64)[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def project(xyz, scale, quat, cam: CameraPose, reg: float = COV2D_REG):
    """Pixel mean, 2x2 image covariance (with ``reg`` on the diagonal) and camera depth."""
    t = cam.world_to_camera(np.asarray(xyz, dtype=np.float64).reshape(3))
    if t[2] <= NEAR:
        raise ValueError(f"Gaussian behind the camera (depth {t[2]:.4f})")
    f = cam.focal
    jac = np.array([[f / t[2], 0.0, -f * t[0] / t[2] ** 2],
                    [0.0, f / t[2], -f * t[1] / t[2] ** 2]])
    tw = jac @ cam.rotation
    cov = tw @ covariance_3d(scale, quat) @ tw.T + reg * np.eye(2)
    return cam.project(t), cov, float(t[2])


def save_gaussians(gs: GaussianSet, path) -> None:
    arr = np.ascontiguousarray(gs.array, dtype="<f4")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(arr)) + arr.tobytes())


def load_gaussians(path) -> GaussianSet:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise GaussianFileError(f"{path}: bad magic {raw[:8]!r}")
    if len(raw) < 12:
        raise GaussianFileError(f"{path}: truncated header")
    (count,) = struct.unpack("<I", raw[8:12])
    need = 12 + count * N_PARAMS * 4
    if len(raw) != need:
        raise GaussianFileError(f"{path}: expected {need} bytes, found {len(raw)}")
    arr = np.frombuffer(raw[12:], dtype="<f4").reshape(count, N_PARAMS).astype(np.float32)
    return GaussianSet(arr)
