"""Encoder/decoder reconstruction network with cross-view attention.

All views of a bundle share the convolution weights and travel through the
network as the batch axis. At low resolution the feature maps of every view
are flattened into one token sequence, tagged with a learned per-role
embedding, and mixed by single-head self-attention, so views exchange
information. Each output pixel parameterizes one Gaussian on its camera ray.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .camera import CameraPose
from .checkpoint import read_checkpoint, write_checkpoint
from .gaussians import GaussianSet
from .optim import OptimizerState
from .tensor import Tensor

ROLES = ("front", "back", "left", "right", "input",
         "src_front", "src_back", "src_left", "src_right",
         "tpl_front", "tpl_back", "tpl_left", "tpl_right")
ORTHO_ROLES = ("front", "back", "left", "right")
OUT_CHANNELS = 14
DEPTH_RANGE = 0.7
OFFSET_RANGE = 0.1
SCALE_FACTOR = 0.02
SCALE_MIN = 1e-4
# initial output bias: scales near a pixel footprint, mostly opaque splats
SCALE_BIAS = 1.0
OPACITY_BIAS = 1.0


@dataclass
class ReconNetConfig:
    n_views: int = 4
    in_channels: int = 3
    width: int = 32
    n_down: int = 3
    resolution: int = 64
    attn_max_res: int = 16
    out_channels: int = OUT_CHANNELS

    def __post_init__(self):
        if self.resolution % (2 ** self.n_down):
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{self.n_down}")
        if self.out_channels != OUT_CHANNELS:
            raise ValueError("the Gaussian head needs 14 output channels")

    @property
    def tap_names(self) -> tuple[str, ...]:
        return ("mid",) + tuple(f"up{i}" for i in range(1, self.n_down + 1))

    @property
    def all_tap_names(self) -> tuple[str, ...]:
        return tuple(f"down{i}" for i in range(1, self.n_down + 1)) + self.tap_names

    def channels(self, level: int) -> int:
        """Channel width at a given down level (0 = input resolution)."""
        return self.width * 2 ** min(level, 2)

    def attention_blocks(self) -> list[str]:
        res = self.resolution // 2 ** self.n_down
        blocks = ["mid"] if res <= self.attn_max_res else []
        for i in (1, 2):
            if i <= self.n_down and res * 2 ** i <= self.attn_max_res:
                blocks.append(f"up{i}")
        return blocks

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ViewBundle:
    images: np.ndarray  # (V, C, h, w)
    cameras: list
    roles: list

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        if self.images.ndim != 4:
            raise ValueError(f"bundle images must be (V, C, h, w), got {self.images.shape}")
        if len(self.cameras) != len(self.images) or len(self.roles) != len(self.images):
            raise ValueError("one camera and one role per view")
        for r in self.roles:
            if r not in ROLES:
                raise ValueError(f"unknown view role '{r}'")

    @property
    def role_ids(self) -> np.ndarray:
        return np.array([ROLES.index(r) for r in self.roles])

    @staticmethod
    def from_hwc(images, cameras, roles) -> "ViewBundle":
        return ViewBundle(np.stack([np.asarray(im).transpose(2, 0, 1) for im in images]), list(cameras), list(roles))


def _he(rng, shape, fan_in, gain=1.0):
    return (rng.standard_normal(shape) * gain * np.sqrt(2.0 / fan_in)).astype(np.float32)


def init_params(cfg: ReconNetConfig, seed: int) -> dict[str, Tensor]:
    """Seeded He-style initialization."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}

    def conv(name, cin, cout, k=3, gain=1.0):
        p[f"{name}.w"] = _he(rng, (cout, cin, k, k), cin * k * k, gain)
        p[f"{name}.b"] = np.zeros(cout, np.float32)

    def norm(name, c):
        p[f"{name}.g"] = np.ones(c, np.float32)
        p[f"{name}.b"] = np.zeros(c, np.float32)

    def attn(name, c):
        for m in ("q", "k", "v"):
            p[f"{name}.{m}"] = _he(rng, (c, c), c, 0.5)
        # small but non-zero so views are coupled and every attention weight gets a gradient from step one
        p[f"{name}.o"] = _he(rng, (c, c), c, 0.1)
        p[f"{name}.role"] = (rng.standard_normal((len(ROLES), c)) * 0.1).astype(np.float32)

    c0 = cfg.channels(0)
    conv("conv_in", cfg.in_channels, c0)
    for i in range(1, cfg.n_down + 1):
        conv(f"down{i}.conv", cfg.channels(max(i - 2, 0)), cfg.channels(i - 1))
        norm(f"down{i}.norm", cfg.channels(i - 1))
    cm = cfg.channels(cfg.n_down)
    conv("mid.conv", cfg.channels(cfg.n_down - 1), cm)
    norm("mid.norm", cm)
    c_prev = cm
    for i in range(1, cfg.n_down + 1):
        lvl = cfg.n_down - i
        c_skip = cfg.channels(lvl)
        c_out = cfg.channels(lvl)
        conv(f"up{i}.conv", c_prev + c_skip, c_out)
        norm(f"up{i}.norm", c_out)
        c_prev = c_out
    for blk in cfg.attention_blocks():
        attn(f"{blk}.attn", cm if blk == "mid" else cfg.channels(cfg.n_down - int(blk[2:])))
    conv("conv_out", c_prev, cfg.out_channels, k=1, gain=0.1)
    p["conv_out.b"][3:6] = SCALE_BIAS
    p["conv_out.b"][10] = OPACITY_BIAS
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def _block(x: Tensor, params, name: str) -> Tensor:
    x = T.conv2d(x, params[f"{name}.conv.w"], params[f"{name}.conv.b"], pad=1)
    return T.relu(T.group_norm(x, params[f"{name}.norm.g"], params[f"{name}.norm.b"]))


def _cross_view_attention(x: Tensor, params, name: str, role_ids: np.ndarray) -> Tensor:
    v, c, h, w = x.shape
    tokens = x.transpose(0, 2, 3, 1).reshape(v, h * w, c)
    onehot = np.zeros((v, 1, len(ROLES)), np.float32)
    onehot[np.arange(v), 0, role_ids] = 1.0
    tokens = tokens + T.matmul(Tensor(onehot), params[f"{name}.role"])
    tokens = tokens.reshape(v * h * w, c)
    q = T.matmul(tokens, params[f"{name}.q"])
    k = T.matmul(tokens, params[f"{name}.k"])
    val = T.matmul(tokens, params[f"{name}.v"])
    att = T.softmax(T.matmul(q, k.transpose(1, 0)) * (1.0 / np.sqrt(c)), axis=-1)
    mixed = T.matmul(T.matmul(att, val), params[f"{name}.o"])
    return x + mixed.reshape(v, h, w, c).transpose(0, 3, 1, 2)


def net_forward(bundle: ViewBundle, params: dict[str, Tensor], cfg: ReconNetConfig):
    """Returns ((V, 14, h, w) output grid, feature taps)."""
    imgs = bundle.images
    if imgs.shape != (cfg.n_views, cfg.in_channels, cfg.resolution, cfg.resolution):
        raise T.ShapeError(f"bundle {imgs.shape} does not match config "
                           f"({cfg.n_views}, {cfg.in_channels}, {cfg.resolution}, {cfg.resolution})")
    roles = bundle.role_ids
    attn_blocks = set(cfg.attention_blocks())
    taps: dict[str, Tensor] = {}
    x = T.conv2d(Tensor(imgs * 2.0 - 1.0), params["conv_in.w"], params["conv_in.b"], pad=1)
    skips = []
    for i in range(1, cfg.n_down + 1):
        x = _block(x, params, f"down{i}")
        skips.append(x)
        taps[f"down{i}"] = x
        x = T.avgpool2x(x)
    x = _block(x, params, "mid")
    if "mid" in attn_blocks:
        x = _cross_view_attention(x, params, "mid.attn", roles)
    taps["mid"] = x
    for i in range(1, cfg.n_down + 1):
        x = T.concat([T.upsample2x(x), skips[cfg.n_down - i]], axis=1)
        x = _block(x, params, f"up{i}")
        if f"up{i}" in attn_blocks:
            x = _cross_view_attention(x, params, f"up{i}.attn", roles)
        taps[f"up{i}"] = x
    out = T.conv2d(x, params["conv_out.w"], params["conv_out.b"])
    return out, taps


def head_to_gaussians(grid: Tensor, cameras: list[CameraPose], depth_range: float = DEPTH_RANGE) -> GaussianSet:
    """Pixel-aligned Gaussians from a (V, 14, h, w) raw grid.

    Channel layout: ray depth (1), lateral image-plane offset (2), scale (3),
    quaternion (4), opacity (1), colour (3).
    """
    v, ch, h, w = grid.shape
    if ch != OUT_CHANNELS or len(cameras) != v:
        raise T.ShapeError(f"grid {grid.shape} incompatible with {len(cameras)} cameras")
    raw = grid.transpose(0, 2, 3, 1).reshape(v * h * w, ch)
    origins, dirs, rights, downs = [], [], [], []
    for cam in cameras:
        c = cam.with_size(w, h)
        o, d = c.pixel_rays()
        origins.append(np.broadcast_to(o, (h * w, 3)))
        dirs.append(d.reshape(-1, 3))
        rights.append(np.broadcast_to(c.rotation[0], (h * w, 3)))
        downs.append(np.broadcast_to(c.rotation[1], (h * w, 3)))
    origin = Tensor(np.concatenate(origins).astype(np.float32))
    dirs = Tensor(np.concatenate(dirs).astype(np.float32))
    right = Tensor(np.concatenate(rights).astype(np.float32))
    down = Tensor(np.concatenate(downs).astype(np.float32))
    radius = np.array([c.radius for c in cameras], np.float32).repeat(h * w)[:, None]
    near = Tensor(radius - depth_range)
    depth = near + T.sigmoid(raw[:, 0:1]) * (2.0 * depth_range)
    off = T.tanh(raw[:, 1:3]) * OFFSET_RANGE
    xyz = origin + depth * dirs + off[:, 0:1] * right + off[:, 1:2] * down
    scale = T.softplus(raw[:, 3:6]) * SCALE_FACTOR + SCALE_MIN
    q = raw[:, 6:10] + Tensor(np.array([1.0, 0.0, 0.0, 0.0], np.float32))
    quat = q / T.sqrt(T.sum_(T.square(q), axis=1, keepdims=True) + 1e-12)
    opacity = T.sigmoid(raw[:, 10:11])
    color = T.sigmoid(raw[:, 11:14])
    return GaussianSet(T.concat([xyz, scale, quat, opacity, color], axis=1))


def tap_distance(a: dict[str, Tensor], b: dict[str, Tensor], subset, eps: float = 1e-12) -> Tensor:
    """Sum over ``subset`` of the L2 norm of (b - a); b is treated as a constant."""
    total = None
    root_eps = float(np.sqrt(eps))
    for k in subset:
        if k not in a or k not in b:
            raise KeyError(f"tap '{k}' missing")
        if a[k].shape != b[k].shape:
            raise T.ShapeError(f"tap '{k}': {a[k].shape} vs {b[k].shape}")
        diff = a[k] - Tensor(b[k].data)
        term = T.sqrt(T.sum_(T.square(diff)) + eps) - root_eps
        total = term if total is None else total + term
    if total is None:
        return Tensor(np.float32(0.0))
    return total


class ReconNet:
    """Config plus parameter dictionary."""

    def __init__(self, cfg: ReconNetConfig, seed: int = 0, params: dict[str, Tensor] | None = None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, seed)

    def __call__(self, bundle: ViewBundle):
        return net_forward(bundle, self.params, self.cfg)

    def gaussians(self, bundle: ViewBundle, depth_range: float = DEPTH_RANGE):
        grid, taps = self(bundle)
        return head_to_gaussians(grid, bundle.cameras, depth_range), taps

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def freeze(self) -> None:
        for p in self.params.values():
            p.requires_grad = False
            p.grad = None

    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def save(self, path, extra: dict | None = None, opt: OptimizerState | None = None) -> None:
        header = {"net": self.cfg.to_dict()}
        if extra:
            header.update(extra)
        write_checkpoint(path, self.snapshot(), header=header, opt=opt)

    @staticmethod
    def load(path) -> tuple["ReconNet", dict, OptimizerState | None]:
        tensors, header, opt = read_checkpoint(path)
        cfg = ReconNetConfig(**header["net"])
        params = {k: Tensor(v, requires_grad=True, name=k) for k, v in tensors.items()}
        return ReconNet(cfg, params=params), header, opt


def config_json(cfg: ReconNetConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)

