"""Evaluation metrics for reconstructed humans: 3D point-set scores and 2D image scores."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .camera import CameraPose
from .gaussians import GaussianSet
from .losses import perceptual
from .mesh import PointCloud, TriangleMesh, sample_surface_points
from .raster import rasterize
from .splat import splat_render

CM_PER_UNIT = 100.0
DEFAULT_TAU_CM = 1.0
PSNR_CAP = 99.0
SSIM_K1, SSIM_K2 = 0.01, 0.03
SSIM_WIN, SSIM_SIGMA = 11, 1.5


def nearest(a: np.ndarray, b: np.ndarray, chunk: int = 2048) -> tuple[np.ndarray, np.ndarray]:
    """For each row of a: (distance, index) of its exact nearest row of b (lowest index on ties)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("nearest neighbours of an empty set")
    dist = np.empty(len(a))
    idx = np.empty(len(a), np.int64)
    for s in range(0, len(a), chunk):
        d = np.sqrt(((a[s:s + chunk, None, :] - b[None, :, :]) ** 2).sum(axis=-1))
        i = np.argmin(d, axis=1)
        idx[s:s + chunk] = i
        dist[s:s + chunk] = d[np.arange(len(i)), i]
    return dist, idx


def chamfer(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(pred-to-scan, scan-to-pred) mean nearest distances in cm."""
    d_p, _ = nearest(pred, gt)
    d_g, _ = nearest(gt, pred)
    return float(d_p.mean() * CM_PER_UNIT), float(d_g.mean() * CM_PER_UNIT)


def normal_consistency(pred: PointCloud, gt: PointCloud) -> float:
    for pc in (pred, gt):
        if (np.linalg.norm(pc.normals, axis=1) < 1e-12).any():
            raise ValueError("zero normal in point cloud")
    _, i_p = nearest(pred.positions, gt.positions)
    _, i_g = nearest(gt.positions, pred.positions)
    a = np.abs((pred.normals * gt.normals[i_p]).sum(axis=1)).mean()
    b = np.abs((gt.normals * pred.normals[i_g]).sum(axis=1)).mean()
    return float(0.5 * (a + b))


def fscore(pred: np.ndarray, gt: np.ndarray, tau_cm: float = DEFAULT_TAU_CM) -> float:
    """Harmonic mean of precision and recall at threshold tau, as a percentage."""
    if tau_cm <= 0:
        raise ValueError("tau must be positive")
    tau = tau_cm / CM_PER_UNIT
    d_p, _ = nearest(pred, gt)
    d_g, _ = nearest(gt, pred)
    p = float((d_p < tau).mean())
    r = float((d_g < tau).mean())
    if p + r == 0:
        return 0.0
    return 200.0 * p * r / (p + r)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gauss_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid window positions and channels."""
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if min(a.shape[:2]) < SSIM_WIN:
        raise ValueError(f"ssim needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    g = _gauss_window()
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x, g), _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(num / den)
    return float(np.mean(vals))


@dataclass
class MetricsReport:
    cd_p2s: float
    cd_s2p: float
    nc: float
    fscore: float
    psnr_front: float
    psnr_back: float
    ssim_front: float
    ssim_back: float
    perceptual_front: float
    perceptual_back: float
    meta: dict = field(default_factory=dict)

    METRIC_FIELDS = ("cd_p2s", "cd_s2p", "nc", "fscore", "psnr_front", "psnr_back",
                     "ssim_front", "ssim_back", "perceptual_front", "perceptual_back")

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.METRIC_FIELDS}

    def is_finite(self) -> bool:
        return all(np.isfinite(v) for v in self.values().values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "MetricsReport":
        return MetricsReport(**json.loads(text))

    @staticmethod
    def mean(reports: list["MetricsReport"], meta: dict | None = None) -> "MetricsReport":
        vals = {k: float(np.mean([getattr(r, k) for r in reports])) for k in MetricsReport.METRIC_FIELDS}
        return MetricsReport(**vals, meta=meta or {})

    def table(self) -> str:
        head = ["CD P-to-S", "CD S-to-P", "NC", "f-score", "PSNR F/B", "SSIM F/B", "Percep F/B"]
        row = [f"{self.cd_p2s:.3f}", f"{self.cd_s2p:.3f}", f"{self.nc:.3f}", f"{self.fscore:.2f}",
               f"{self.psnr_front:.2f}/{self.psnr_back:.2f}", f"{self.ssim_front:.3f}/{self.ssim_back:.3f}",
               f"{self.perceptual_front:.4f}/{self.perceptual_back:.4f}"]
        widths = [max(len(h), len(r)) for h, r in zip(head, row)]
        line1 = " | ".join(h.ljust(w) for h, w in zip(head, widths))
        line2 = " | ".join(r.ljust(w) for r, w in zip(row, widths))
        return f"{line1}\n{'-' * len(line1)}\n{line2}"


def gaussian_points(gs: GaussianSet, min_opacity: float = 0.5) -> np.ndarray:
    keep = gs.opacity > min_opacity
    if not keep.any():
        raise ValueError("no Gaussian passes the opacity filter")
    return gs.xyz[keep].astype(np.float64)


def geometry_metrics(points: np.ndarray, gt_mesh: TriangleMesh, n_samples: int = 4000, seed: int = 0,
                     tau_cm: float = DEFAULT_TAU_CM) -> dict[str, float]:
    gt = sample_surface_points(gt_mesh, n_samples, seed)
    # prediction-side normals come from the nearest scan sample
    _, idx = nearest(points, gt.positions)
    pred = PointCloud(points, gt.normals[idx])
    p2s, s2p = chamfer(points, gt.positions)
    return {"cd_p2s": p2s, "cd_s2p": s2p, "nc": normal_consistency(pred, gt),
            "fscore": fscore(points, gt.positions, tau_cm)}


def image_metrics(pred: GaussianSet, gt_mesh: TriangleMesh, cams: dict[str, CameraPose],
                  background=1.0) -> dict[str, float]:
    out = {}
    bg = np.broadcast_to(np.asarray(background, np.float64), (3,))
    for name, cam in cams.items():
        img = splat_render(pred, cam, tuple(bg)).color.data.astype(np.float64)
        gt = rasterize(gt_mesh, cam, "rgb", background=bg).pixels.astype(np.float64)
        img = np.clip(img, 0.0, 1.0)
        out[f"psnr_{name}"] = psnr(img, gt)
        out[f"ssim_{name}"] = ssim(img, gt)
        out[f"perceptual_{name}"] = float(perceptual(img.astype(np.float32), gt.astype(np.float32)).item())
    return out


def evaluate_reconstruction(pred: GaussianSet, gt_mesh: TriangleMesh, cams: dict[str, CameraPose],
                            n_samples: int = 4000, seed: int = 0, tau_cm: float = DEFAULT_TAU_CM,
                            geometry_from: GaussianSet | None = None, meta: dict | None = None,
                            min_opacity: float = 0.5) -> MetricsReport:
    """3D scores from Gaussian centres with opacity > ``min_opacity``, 2D scores from the front/back renders.

    ``geometry_from`` lets the 3D scores come from a different set (e.g. the normal Gaussians).
    """
    if set(cams) != {"front", "back"}:
        raise ValueError("cams must hold exactly 'front' and 'back'")
    pts = gaussian_points(geometry_from if geometry_from is not None else pred, min_opacity)
    geo = geometry_metrics(pts, gt_mesh, n_samples, seed, tau_cm)
    img = image_metrics(pred, gt_mesh, cams)
    m = dict(meta or {})
    m.setdefault("tau_cm", tau_cm)
    return MetricsReport(**geo, **img, meta=m)
