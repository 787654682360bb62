from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_RADIUS = 1.5
DEFAULT_FOV = 49.0


@dataclass(frozen=True)
class CameraPose:
    """Pinhole camera on an orbit around the origin.

    Camera space follows the x-right, y-down, z-forward convention; pixel
    centres sit at integer + 0.5.
    """

    azimuth: float
    elevation: float
    radius: float
    fov: float
    width: int
    height: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not 0 < self.fov < 180:
            raise ValueError(f"fov must lie in (0, 180), got {self.fov}")
        if abs(self.elevation) >= 90:
            raise ValueError(f"|elevation| must be < 90, got {self.elevation}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")

    @property
    def position(self) -> np.ndarray:
        az, el = np.radians(self.azimuth), np.radians(self.elevation)
        return self.radius * np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the camera axes in world coordinates."""
        pos = self.position
        fwd = -pos / np.linalg.norm(pos)
        right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    @property
    def translation(self) -> np.ndarray:
        return -self.rotation @ self.position

    @property
    def focal(self) -> float:
        return 0.5 * self.height / np.tan(np.radians(self.fov) / 2)

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * self.width, 0.5 * self.height

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        f = self.focal
        return np.stack([f * pts_cam[..., 0] / pts_cam[..., 2] + cx,
                         f * pts_cam[..., 1] / pts_cam[..., 2] + cy], axis=-1)

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel ray directions in world space, scaled so camera-z == 1.

        Returns (origin (3,), dirs (H, W, 3)); ``origin + t * dirs`` sits at camera depth t.
        """
        cx, cy = self.center
        xs = (np.arange(self.width) + 0.5 - cx) / self.focal
        ys = (np.arange(self.height) + 0.5 - cy) / self.focal
        gx, gy = np.meshgrid(xs, ys)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        return self.position, d_cam @ self.rotation

    def with_size(self, width: int, height: int) -> "CameraPose":
        return CameraPose(self.azimuth, self.elevation, self.radius, self.fov, width, height)


def orbit_camera(azimuth: float, elevation: float, radius: float = DEFAULT_RADIUS,
                 fov: float = DEFAULT_FOV, w: int = 64, h: int = 64) -> CameraPose:
    return CameraPose(float(azimuth), float(elevation), float(radius), float(fov), int(w), int(h))


ORTHO_AZIMUTHS = {"front": 0.0, "back": 180.0, "left": 90.0, "right": 270.0}


def four_orthogonal_views(radius: float = DEFAULT_RADIUS, fov: float = DEFAULT_FOV,
                          w: int = 64, h: int = 64) -> list[CameraPose]:
    """Front, back, left, right cameras at zero elevation."""
    return [orbit_camera(az, 0.0, radius, fov, w, h) for az in ORTHO_AZIMUTHS.values()]


def random_views(rng: np.random.Generator, n: int, radius: float, fov: float, w: int, h: int,
                 elevation_range: tuple[float, float] = (-30.0, 30.0)) -> list[CameraPose]:
    az = rng.uniform(0.0, 360.0, size=n)
    el = rng.uniform(*elevation_range, size=n)
    return [orbit_camera(a, e, radius, fov, w, h) for a, e in zip(az, el)]
