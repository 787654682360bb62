"""Training stages, augmentation and two-stage inference.

Stage order: supervisor -> geometry (UGL) -> texture (CGT). The animation
model trains on its own triplets and feeds the online augmentation path.

Normal Gaussians carry world-space normals encoded as colours in [0, 1];
their renders are mapped to camera space before being compared with the
camera-space normal maps produced by the rasterizer.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import tensor as T
from .body import (ScanSample, TemplatePool, build_dataset, build_rig, cull_interior, lbs_repose, make_triplet,
                   pose_scan, sample_pose, skeleton_template_mesh)
from .camera import CameraPose, four_orthogonal_views, orbit_camera, random_views
from .config import RunConfig
from .gaussians import GaussianSet
from .losses import RenderPair, proxy, render_loss, ugl_total_loss
from .mesh import TriangleMesh, pca_normals
from .metrics import MetricsReport, evaluate_reconstruction, geometry_metrics, gaussian_points, psnr
from .net import ORTHO_ROLES, ReconNet, ReconNetConfig, ViewBundle, tap_distance
from .optim import OptimizerState, adamw_step, zero_grad
from .raster import render_all
from .splat import camera_normal_render, splat_render

STAGE_CODES = {"supervisor": 1, "ugl": 2, "cgt": 3, "anim": 4, "sampler": 5, "eval": 6, "aug": 7}
BACKGROUND = 1.0
CGT_ROLES = ("front", "back", "left", "right", "input")
ANIM_ROLES = ("src_front", "src_back", "src_left", "src_right", "tpl_front", "tpl_back", "tpl_left", "tpl_right")
PROVENANCES = ("original", "lbs", "oaa")


class TrainingDiverged(RuntimeError):
    pass


class ContractError(RuntimeError):
    pass


def stage_rng(cfg: RunConfig, stage: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, STAGE_CODES[stage], *extra])


def ortho_cams(cfg: RunConfig) -> list[CameraPose]:
    return four_orthogonal_views(cfg.radius, cfg.fov, cfg.resolution, cfg.resolution)


def eval_cams(cfg: RunConfig) -> list[CameraPose]:
    r = cfg.resolution
    cams = ortho_cams(cfg)
    diagonals = ((45, 15), (135, -15), (225, 15), (315, -15))
    cams += [orbit_camera(az, el, cfg.radius, cfg.fov, r, r) for az, el in diagonals]
    return cams


def net_config(cfg: RunConfig, n_views: int) -> ReconNetConfig:
    return ReconNetConfig(n_views=n_views, width=cfg.width, n_down=cfg.n_down, resolution=cfg.resolution)


# -- samples ------------------------------------------------------------------

@dataclass
class TrainingSample:
    """A supervision source: a mesh scan, or (augmented) Gaussians standing in for one."""

    sample_id: str
    provenance: str
    template: TriangleMesh  # coarse body at the sample's pose
    mesh: TriangleMesh | None = None
    color_gs: GaussianSet | None = None
    normal_gs: GaussianSet | None = None
    cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance '{self.provenance}'")
        if self.mesh is None and (self.color_gs is None or self.normal_gs is None):
            raise ValueError("a sample needs a mesh or both colour and normal Gaussians")

    def render(self, cam: CameraPose) -> dict[str, np.ndarray]:
        """rgb (H,W,3), normal (H,W,3) camera-space encoded, mask (H,W)."""
        key = (cam.azimuth, cam.elevation, cam.radius, cam.fov, cam.width, cam.height)
        if key in self.cache:
            return self.cache[key]
        if self.mesh is not None:
            r = render_all(self.mesh, cam, background=BACKGROUND)
            out = {"rgb": r["rgb"], "normal": r["normal"], "mask": r["mask"][..., 0]}
        else:
            with T.no_grad():
                c = splat_render(self.color_gs, cam, (BACKGROUND,) * 3)
                n = camera_normal_render(self.normal_gs, cam, BACKGROUND)
            out = {"rgb": np.clip(c.color.data, 0, 1), "normal": np.clip(n.color.data, 0, 1),
                   "mask": (c.alpha.data > 0.5).astype(np.float32)}
        self.cache[key] = out
        return out

    def render_views(self, cams, kind: str) -> list[np.ndarray]:
        return [self.render(c)[kind] for c in cams]


def sample_from_scan(s: ScanSample) -> TrainingSample:
    return TrainingSample(s.sample_id, "original", skeleton_template_mesh(s.skinned.rig, s.pose), mesh=s.scan)


@dataclass
class DataSplits:
    train: list  # ScanSample
    test: list
    pool: TemplatePool
    train_samples: list = field(default_factory=list)  # TrainingSample
    test_samples: list = field(default_factory=list)


def make_splits(cfg: RunConfig) -> DataSplits:
    train, pool = build_dataset(cfg.n_train_ids, cfg.poses_per_id, cfg.seed, "train", cfg.pose_scale)
    test, _ = build_dataset(cfg.n_test_ids, 1, cfg.seed, "test", cfg.pose_scale)
    # held-out identities get a non-rest pose too
    test = [ScanSample(s.sample_id, s.identity, s.skinned, p, pose_scan(s.skinned, p))
            for s, p in ((s, sample_pose(cfg.seed * 1009 + 17 * i + 3, scale=cfg.pose_scale))
                         for i, s in enumerate(test))]
    return DataSplits(train, test, pool, [sample_from_scan(s) for s in train], [sample_from_scan(s) for s in test])


# -- priors -------------------------------------------------------------------

def corrupt_map(img: np.ndarray, rng: np.random.Generator, blur: float, noise: float, shift: int) -> np.ndarray:
    out = np.asarray(img, dtype=np.float64)
    if blur > 0:
        out = ndimage.gaussian_filter(out, sigma=(blur, blur, 0), mode="nearest")
    if noise > 0:
        out = out + rng.normal(0.0, noise, out.shape)
    if shift > 0:
        dy, dx = rng.integers(-shift, shift + 1, 2)
        out = ndimage.shift(out, (dy, dx, 0), order=0, mode="constant", cval=BACKGROUND)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def simulate_priors(scan, cams4: list[CameraPose], template: TriangleMesh | None = None, seed: int = 0,
                    blur: float = 1.0, noise: float = 0.05, shift: int = 2) -> list[np.ndarray]:
    """(front, back, left, right) normal priors.

    Front/back: the scan's normal renders, blurred, noised and shifted.
    Left/right: clean normal renders of the coarse template body.
    """
    sample = scan if isinstance(scan, TrainingSample) else None
    if sample is None:
        sample = TrainingSample("scan", "original", template if template is not None else scan, mesh=scan)
    tpl = template if template is not None else sample.template
    rng = np.random.default_rng(seed)
    front, back = (corrupt_map(sample.render(c)["normal"], rng, blur, noise, shift) for c in cams4[:2])
    tpl_renders = [render_all(tpl, c, background=BACKGROUND)["normal"] for c in cams4[2:]]
    return [front, back] + [r.astype(np.float32) for r in tpl_renders]


def priors_for(sample: TrainingSample, cfg: RunConfig, seed: int) -> list[np.ndarray]:
    return simulate_priors(sample, ortho_cams(cfg), sample.template, seed, cfg.prior_blur, cfg.prior_noise,
                           cfg.prior_shift)


def clean_bundle(sample: TrainingSample, cfg: RunConfig) -> ViewBundle:
    cams = ortho_cams(cfg)
    return ViewBundle.from_hwc(sample.render_views(cams, "normal"), cams, ORTHO_ROLES)


def prior_bundle(priors: list[np.ndarray], cfg: RunConfig) -> ViewBundle:
    return ViewBundle.from_hwc(priors, ortho_cams(cfg), ORTHO_ROLES)


# -- losses over supervision views --------------------------------------------

def supervision_cams(cfg: RunConfig, rng: np.random.Generator) -> list[CameraPose]:
    e = cfg.elevation_range
    return random_views(rng, cfg.views, cfg.radius, cfg.fov, cfg.resolution, cfg.resolution, (-e, e))


def _gt_feats(sample: TrainingSample, cam: CameraPose, kind: str, img: np.ndarray):
    key = ("feats", kind, cam.azimuth, cam.elevation, cam.width)
    if key not in sample.cache:
        with T.no_grad():
            sample.cache[key] = proxy().features(img)
    return sample.cache[key]


def normal_loss(gs: GaussianSet, sample: TrainingSample, cams: list[CameraPose]) -> T.Tensor:
    pairs = []
    for c in cams:
        gt = sample.render(c)
        img = camera_normal_render(gs, c, BACKGROUND)
        pairs.append(RenderPair(img.color, img.alpha, gt["normal"], gt["mask"],
                                _gt_feats(sample, c, "normal", gt["normal"])))
    return render_loss(pairs)


def color_loss(gs: GaussianSet, sample: TrainingSample, cams: list[CameraPose]) -> T.Tensor:
    pairs = []
    for c in cams:
        gt = sample.render(c)
        img = splat_render(gs, c, (BACKGROUND,) * 3)
        pairs.append(RenderPair(img.color, img.alpha, gt["rgb"], gt["mask"], _gt_feats(sample, c, "rgb", gt["rgb"])))
    return render_loss(pairs)


# -- generic optimisation loop ------------------------------------------------

@dataclass
class TrainResult:
    net: ReconNet
    losses: list
    opt: OptimizerState
    stage: str
    cfg: RunConfig
    extra: dict = field(default_factory=dict)

    def save(self, out_dir=None) -> Path:
        d = Path(out_dir) if out_dir is not None else run_dir(self.cfg, self.stage)
        d.mkdir(parents=True, exist_ok=True)
        self.net.save(d / "model.ckpt", extra={"stage": self.stage, "run": self.cfg.to_dict(),
                                               "config_hash": self.cfg.hash()}, opt=self.opt)
        with open(d / "loss.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "loss"])
            for i, v in enumerate(self.losses):
                w.writerow([i, repr(float(v))])
        (d / "config.txt").write_text(self.cfg.to_text())
        return d


def run_dir(cfg: RunConfig, stage: str) -> Path:
    return Path(cfg.out) / f"{stage}-{cfg.hash()}"


def optimise(net: ReconNet, steps: int, cfg: RunConfig, step_fn, stage: str) -> TrainResult:
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    leaves = list(net.params.values())
    losses = []
    for step in range(steps):
        loss = step_fn(step)
        val = loss.item()
        if not np.isfinite(val):
            raise TrainingDiverged(f"{stage}: non-finite loss at step {step}")
        zero_grad(net.params)
        T.backward(loss, leaves=leaves)
        adamw_step(net.params, state)
        losses.append(val)
    return TrainResult(net, losses, state, stage, cfg)


def load_stage(path, cfg: RunConfig | None = None) -> tuple[ReconNet, dict]:
    net, header, _ = ReconNet.load(path)
    if cfg is not None:
        run = header.get("run", {})
        for key in ("resolution", "fov", "radius"):
            if key in run and run[key] != getattr(cfg, key):
                raise ContractError(f"checkpoint {key}={run[key]} does not match config {getattr(cfg, key)}")
    net.freeze()
    return net, header


# -- process one: supervisor and geometry -------------------------------------

def train_supervisor(samples: list[TrainingSample], cfg: RunConfig, steps: int | None = None) -> TrainResult:
    """Multi-view twin: clean orthogonal GT normal maps in, normal Gaussians out."""
    if not samples:
        raise ValueError("empty dataset")
    net = ReconNet(net_config(cfg, 4), seed=cfg.init_seed)

    def step_fn(step):
        rng = stage_rng(cfg, "supervisor", step)
        s = samples[int(rng.integers(len(samples)))]
        gs, _ = net.gaussians(clean_bundle(s, cfg))
        return normal_loss(gs, s, supervision_cams(cfg, rng))

    return optimise(net, cfg.steps_supervisor if steps is None else steps, cfg, step_fn, "supervisor")


@dataclass
class Draw:
    index: int
    provenance: str
    seed: int


def training_sampler(n_samples: int, mode: str, ratio: float, seed: int):
    """Endless seeded stream of draws; each is augmented with probability ``ratio`` unless mode is none."""
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    if mode not in ("none", "lbs", "oaa"):
        raise ValueError(f"unknown augmentation mode '{mode}'")
    rng = np.random.default_rng([seed, STAGE_CODES["sampler"]])
    while True:
        idx = int(rng.integers(n_samples))
        aug = mode != "none" and rng.random() < ratio
        yield Draw(idx, mode if aug else "original", int(rng.integers(2 ** 31)))


class Augmenter:
    """Materializes sampler draws into training samples."""

    def __init__(self, scans: list[ScanSample], base: list[TrainingSample], pool: TemplatePool,
                 anim: ReconNet | None = None, cfg: RunConfig | None = None):
        self.scans, self.base, self.pool, self.anim, self.cfg = scans, base, pool, anim, cfg

    def __call__(self, draw: Draw) -> TrainingSample:
        if draw.provenance == "original":
            return self.base[draw.index]
        if draw.provenance == "lbs":
            return augment_lbs(self.scans[draw.index], self.pool, draw.seed)
        if self.anim is None:
            raise ContractError("oaa augmentation needs a trained animation model")
        return augment_oaa(self.anim, self.base[draw.index], self.pool, draw.seed, self.cfg)


def train_ugl(samples: list[TrainingSample], supervisor: ReconNet | None, cfg: RunConfig,
              augmenter: Augmenter | None = None, steps: int | None = None) -> TrainResult:
    """Monocular geometry model on simulated priors, optionally regularized toward the supervisor's taps."""
    if cfg.alpha > 0:
        if supervisor is None:
            raise ContractError("feature regularization needs a supervisor")
        supervisor.freeze()
    net = ReconNet(net_config(cfg, 4), seed=cfg.init_seed)
    if supervisor is not None and cfg.alpha > 0:
        for k in cfg.sfr_taps:
            if k not in net.cfg.all_tap_names:
                raise ContractError(f"unknown tap '{k}'")
        if supervisor.cfg != net.cfg:
            raise ContractError("supervisor and geometry nets differ in configuration")
    draws = None
    if cfg.aug_mode != "none":
        if augmenter is None:
            raise ContractError(f"aug_mode '{cfg.aug_mode}' needs an augmenter")
        draws = training_sampler(len(samples), cfg.aug_mode, cfg.aug_ratio, cfg.seed)

    def step_fn(step):
        rng = stage_rng(cfg, "ugl", step)
        if draws is None:
            s = samples[int(rng.integers(len(samples)))]
        else:
            s = augmenter(next(draws))
        priors = priors_for(s, cfg, int(rng.integers(2 ** 31)))
        gs, taps = net.gaussians(prior_bundle(priors, cfg))
        l1 = normal_loss(gs, s, supervision_cams(cfg, rng))
        if cfg.alpha == 0:
            return l1
        with T.no_grad():
            _, sup_taps = supervisor(clean_bundle(s, cfg))
        return ugl_total_loss(l1, tap_distance(taps, sup_taps, cfg.sfr_taps), cfg.alpha)

    return optimise(net, cfg.steps_ugl if steps is None else steps, cfg, step_fn, "ugl")


def infer_normals(ugl: ReconNet, priors: list[np.ndarray], cfg: RunConfig) -> GaussianSet:
    with T.no_grad():
        gs, _ = ugl.gaussians(prior_bundle(priors, cfg))
    return gs.detach()


# -- process two: texture -----------------------------------------------------

def cgt_bundle(sample: TrainingSample, cfg: RunConfig, mode: str, ugl: ReconNet | None = None,
               prior_seed: int = 0, image: np.ndarray | None = None) -> ViewBundle:
    """Five-view texture input: four geometry renders plus the front RGB image.

    ``cascaded`` renders the geometry model's own output; ``separate`` uses
    the scan's normal maps instead. Training and inference share this code.
    """
    cams = ortho_cams(cfg)
    if mode == "cascaded":
        if ugl is None:
            raise ContractError("cascaded mode needs the geometry model")
        gs = infer_normals(ugl, priors_for(sample, cfg, prior_seed), cfg)
        with T.no_grad():
            geo = [np.clip(camera_normal_render(gs, c, BACKGROUND).color.data, 0, 1) for c in cams]
    elif mode == "separate":
        geo = sample.render_views(cams, "normal")
    else:
        raise ValueError(f"unknown cascade mode '{mode}'")
    img = sample.render(cams[0])["rgb"] if image is None else image
    return ViewBundle.from_hwc(geo + [img], cams + [cams[0]], CGT_ROLES)


def train_cgt(samples: list[TrainingSample], ugl: ReconNet | None, cfg: RunConfig,
              steps: int | None = None) -> TrainResult:
    if cfg.cascade == "cascaded" and ugl is None:
        raise ContractError("cascaded training needs the geometry checkpoint")
    if ugl is not None:
        ugl.freeze()
    net = ReconNet(net_config(cfg, 5), seed=cfg.init_seed + 1)

    def step_fn(step):
        rng = stage_rng(cfg, "cgt", step)
        s = samples[int(rng.integers(len(samples)))]
        bundle = cgt_bundle(s, cfg, cfg.cascade, ugl, int(rng.integers(2 ** 31)))
        gs, _ = net.gaussians(bundle)
        return color_loss(gs, s, supervision_cams(cfg, rng))

    res = optimise(net, cfg.steps_cgt if steps is None else steps, cfg, step_fn, "cgt")
    res.extra["cascade"] = cfg.cascade
    return res


# -- animation and augmentation -----------------------------------------------

@dataclass
class Triplet:
    source: TrainingSample
    template: TriangleMesh
    target: TrainingSample


def build_triplets(scans: list[ScanSample], n: int, seed: int, pose_scale: float = 0.5) -> list[Triplet]:
    """Source/target pose pairs of the same identity, with the target's coarse template."""
    rng = np.random.default_rng([seed, STAGE_CODES["anim"]])
    ids = sorted({s.identity for s in scans})
    bodies = {s.identity: s.skinned for s in scans}
    out = []
    for _ in range(n):
        body = bodies[ids[int(rng.integers(len(ids)))]]
        p_src = sample_pose(int(rng.integers(2 ** 31)), scale=pose_scale)
        p_tgt = sample_pose(int(rng.integers(2 ** 31)), scale=pose_scale)
        s_o, m_t, s_t = make_triplet(body, p_src, p_tgt)
        out.append(Triplet(TrainingSample("src", "original", skeleton_template_mesh(body.rig, p_src), mesh=s_o),
                           m_t, TrainingSample("tgt", "original", m_t, mesh=s_t)))
    return out


def anim_bundle(source: TrainingSample, template: TriangleMesh, cfg: RunConfig) -> ViewBundle:
    cams = ortho_cams(cfg)
    rgb = source.render_views(cams, "rgb")
    tpl = [render_all(template, c, background=BACKGROUND)["normal"] for c in cams]
    return ViewBundle.from_hwc(rgb + tpl, cams + cams, ANIM_ROLES)


def train_anim(triplets: list[Triplet], cfg: RunConfig, steps: int | None = None) -> TrainResult:
    net = ReconNet(net_config(cfg, 8), seed=cfg.init_seed + 2)
    bundles = {}

    def step_fn(step):
        rng = stage_rng(cfg, "anim", step)
        i = int(rng.integers(len(triplets)))
        tr = triplets[i]
        if i not in bundles:
            bundles[i] = anim_bundle(tr.source, tr.template, cfg)
        gs, _ = net.gaussians(bundles[i])
        return color_loss(gs, tr.target, supervision_cams(cfg, rng))

    return optimise(net, cfg.steps_anim if steps is None else steps, cfg, step_fn, "anim")


def estimate_normals(gs: GaussianSet, cameras: list[CameraPose], k: int = 8, min_opacity: float = 0.1) -> np.ndarray:
    """Unit normals from local PCA of the visible centres, facing the camera each Gaussian came from."""
    xyz = gs.xyz.astype(np.float64)
    solid = xyz[gs.opacity > min_opacity]
    nrm = pca_normals(xyz, k, solid if len(solid) >= k else xyz)
    per_view = len(xyz) // len(cameras)
    cam_pos = np.repeat(np.stack([c.position for c in cameras]), per_view, axis=0)
    flip = ((cam_pos - xyz) * nrm).sum(axis=1) < 0
    nrm[flip] *= -1
    return nrm


def augment_oaa(anim: ReconNet, sample: TrainingSample, pool: TemplatePool, seed: int,
                cfg: RunConfig, opt_state: OptimizerState | None = None) -> TrainingSample:
    """One frozen feed-forward pass re-poses ``sample`` to a template drawn from the pool."""
    if opt_state is not None or any(p.requires_grad or p.grad is not None for p in anim.params.values()):
        raise ContractError("augmentation requires a frozen animation model with no optimizer attached")
    rng = np.random.default_rng([seed, STAGE_CODES["aug"]])
    pose, shape = pool.draw(rng)
    template = skeleton_template_mesh(build_rig(shape), pose)
    bundle = anim_bundle(sample, template, cfg)
    before = T.nodes_recorded
    with T.no_grad():
        gs, _ = anim.gaussians(bundle)
    if T.nodes_recorded != before:
        raise ContractError("augmentation path recorded a compute graph")
    gs = gs.detach()
    nrm = estimate_normals(gs, bundle.cameras)
    normal_gs = gs.with_colors((nrm + 1.0) * 0.5)
    return TrainingSample(f"{sample.sample_id}+oaa{seed}", "oaa", template, color_gs=gs, normal_gs=normal_gs)


def augment_lbs(scan: ScanSample, pool: TemplatePool, seed: int) -> TrainingSample:
    """Re-pose the scan to a pooled template pose with linear blend skinning."""
    rng = np.random.default_rng([seed, STAGE_CODES["aug"]])
    pose, _ = pool.draw(rng)
    mesh = lbs_repose(scan.skinned, scan.pose, pose)
    mesh = cull_interior(mesh, scan.skinned.part, scan.skinned.rig, pose)
    template = skeleton_template_mesh(scan.skinned.rig, pose)
    return TrainingSample(f"{scan.sample_id}+lbs{seed}", "lbs", template, mesh=mesh)


# -- inference and evaluation -------------------------------------------------

def reconstruct_from_inputs(image: np.ndarray, priors: list[np.ndarray], ugl: ReconNet, cgt: ReconNet,
                            cfg: RunConfig) -> tuple[GaussianSet, GaussianSet]:
    if priors is None or len(priors) != 4:
        raise ValueError("reconstruction from an image needs four normal priors")
    normal_gs = infer_normals(ugl, priors, cfg)
    cams = ortho_cams(cfg)
    with T.no_grad():
        geo = [np.clip(camera_normal_render(normal_gs, c, BACKGROUND).color.data, 0, 1) for c in cams]
        bundle = ViewBundle.from_hwc(geo + [image], cams + [cams[0]], CGT_ROLES)
        color_gs, _ = cgt.gaussians(bundle)
    return normal_gs, color_gs.detach()


def reconstruct(sample: TrainingSample, ugl: ReconNet, cgt: ReconNet, cfg: RunConfig,
                prior_seed: int = 0) -> tuple[GaussianSet, GaussianSet]:
    """Two-stage inference on a held-out scan (priors simulated from it, image rendered from the front)."""
    priors = priors_for(sample, cfg, prior_seed)
    image = sample.render(ortho_cams(cfg)[0])["rgb"]
    return reconstruct_from_inputs(image, priors, ugl, cgt, cfg)


def eval_prior_seed(cfg: RunConfig, i: int) -> int:
    return int(stage_rng(cfg, "eval", i).integers(2 ** 31))


def evaluate_geometry_net(net: ReconNet, samples: list[TrainingSample], cfg: RunConfig,
                          inputs: str = "priors") -> dict[str, float]:
    """Mean held-out normal-render PSNR and 3D scores of a process-one model.

    ``inputs`` selects clean orthogonal GT normals (supervisor) or simulated priors.
    """
    cams = eval_cams(cfg)
    rows = []
    for i, s in enumerate(samples):
        if inputs == "clean":
            bundle = clean_bundle(s, cfg)
        else:
            bundle = prior_bundle(priors_for(s, cfg, eval_prior_seed(cfg, i)), cfg)
        with T.no_grad():
            gs, _ = net.gaussians(bundle)
            ps = [psnr(np.clip(camera_normal_render(gs, c, BACKGROUND).color.data, 0, 1), s.render(c)["normal"])
                  for c in cams]
        try:
            geo = geometry_metrics(gaussian_points(gs, cfg.eval_min_opacity), s.mesh, cfg.eval_samples, cfg.seed,
                                   cfg.tau_cm)
        except ValueError:
            geo = {"cd_p2s": np.inf, "cd_s2p": np.inf, "nc": 0.0, "fscore": 0.0}
        rows.append({"psnr": float(np.mean(ps)), **geo})
    return {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}


def evaluate_pipeline(samples: list[TrainingSample], ugl: ReconNet, cgt: ReconNet,
                      cfg: RunConfig) -> tuple[MetricsReport, list[MetricsReport]]:
    cams4 = ortho_cams(cfg)
    cams = {"front": cams4[0], "back": cams4[1]}
    reports = []
    for i, s in enumerate(samples):
        _, color_gs = reconstruct(s, ugl, cgt, cfg, eval_prior_seed(cfg, i))
        reports.append(evaluate_reconstruction(color_gs, s.mesh, cams, cfg.eval_samples, cfg.seed, cfg.tau_cm,
                                               meta={"sample": s.sample_id}, min_opacity=cfg.eval_min_opacity))
    meta = {"seed": cfg.seed, "config_hash": cfg.hash(), "n_samples": len(samples), "tau_cm": cfg.tau_cm,
            "min_opacity": cfg.eval_min_opacity}
    return MetricsReport.mean(reports, meta), reports


def write_report(report: MetricsReport, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(report.to_json())


def params_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


def summary_json(d: dict) -> str:
    return json.dumps(d, sort_keys=True, indent=1)
