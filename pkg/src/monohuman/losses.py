"""Training losses: render loss, fixed-filter perceptual proxy and the feature-regularized total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PERCEPTUAL_SEED = 0xC0FFEE
PERCEPTUAL_CHANNELS = (8, 16, 32)
DEFAULT_ALPHA = 0.01


class PerceptualProxy:
    """Frozen random 3-level conv pyramid; distance = mean squared difference of channel-normalized features."""

    def __init__(self, seed: int = PERCEPTUAL_SEED, channels=PERCEPTUAL_CHANNELS):
        rng = np.random.default_rng(seed)
        self.weights = []
        cin = 3
        for c in channels:
            w = rng.standard_normal((c, cin, 3, 3)) * np.sqrt(2.0 / (cin * 9))
            self.weights.append(Tensor(w.astype(np.float32)))
            cin = c

    def features(self, img) -> list[Tensor]:
        """img: (H, W, 3) Tensor or array -> per-level unit-normalized feature maps."""
        x = img if isinstance(img, Tensor) else Tensor(np.asarray(img, dtype=np.float32))
        x = x.transpose(2, 0, 1).reshape(1, 3, x.shape[0], x.shape[1])
        feats = []
        for i, w in enumerate(self.weights):
            x = T.relu(T.conv2d(x, Tensor(w.data.astype(x.dtype)), stride=1 if i == 0 else 2, pad=1))
            feats.append(T.l2_norm(x, axis=1))
        return feats

    def distance(self, a, b, b_feats: list[Tensor] | None = None) -> Tensor:
        fa = self.features(a)
        fb = b_feats if b_feats is not None else self.features(b)
        if len(fa) != len(fb) or any(x.shape != y.shape for x, y in zip(fa, fb)):
            raise T.ShapeError("perceptual: image shapes differ")
        total = None
        for x, y in zip(fa, fb):
            term = T.mean(T.square(x - y))
            total = term if total is None else total + term
        return total * (1.0 / len(fa))


_PROXY: PerceptualProxy | None = None


def proxy() -> PerceptualProxy:
    global _PROXY
    if _PROXY is None:
        _PROXY = PerceptualProxy()
    return _PROXY


def perceptual(img_a, img_b) -> Tensor:
    a = img_a if isinstance(img_a, Tensor) else Tensor(np.asarray(img_a, dtype=np.float32))
    b = img_b if isinstance(img_b, Tensor) else Tensor(np.asarray(img_b, dtype=np.float32))
    if a.shape != b.shape:
        raise T.ShapeError(f"perceptual: {a.shape} vs {b.shape}")
    return proxy().distance(a, b)


@dataclass
class RenderPair:
    color: Tensor  # (H, W, 3) prediction
    alpha: Tensor  # (H, W)
    gt_image: np.ndarray  # (H, W, 3)
    gt_mask: np.ndarray  # (H, W)
    gt_feats: list | None = None  # cached perceptual features of gt_image

    def __post_init__(self):
        if self.color.shape[:2] != np.shape(self.gt_image)[:2] or self.alpha.shape != np.shape(self.gt_mask):
            raise T.ShapeError(f"render pair resolution mismatch: {self.color.shape} vs {np.shape(self.gt_image)}")


def render_loss(pairs: list[RenderPair], perceptual_weight: float = 1.0) -> Tensor:
    """Sum over views of colour MSE + alpha-vs-mask MSE + perceptual distance, unit weights."""
    if not pairs:
        raise ValueError("render_loss needs at least one view")
    total = None
    for p in pairs:
        dt = p.color.dtype
        gt = Tensor(np.asarray(p.gt_image, dtype=dt))
        term = T.mean(T.square(p.color - gt)) + T.mean(T.square(p.alpha - Tensor(np.asarray(p.gt_mask, dtype=dt))))
        if perceptual_weight:
            feats = p.gt_feats if p.gt_feats is not None else proxy().features(gt)
            term = term + proxy().distance(p.color, None, b_feats=feats) * perceptual_weight
        total = term if total is None else total + term
    return total


def ugl_total_loss(l1: Tensor, l_sfr: Tensor, alpha: float = DEFAULT_ALPHA) -> Tensor:
    """L1 + alpha * L_SFR; alpha = 0 returns L1 itself."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if alpha == 0:
        return l1
    return l1 + l_sfr * float(alpha)
