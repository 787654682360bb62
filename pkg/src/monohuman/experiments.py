"""Paired-seed ablation runs at desk scale.

Each run trains every model variant on the same seed-derived data, with the
same initialization and the same per-step draws, so variants differ only in
the toggle under study. The acceptance tests and the demo scripts share
these helpers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import pipeline as P
from . import tensor as T
from .body import DEFAULT_LIMITS, PoseParams, build_rig, lbs_repose, make_identity, max_edge_stretch
from .config import RunConfig
from .raster import rasterize

ALL_BLOCK_TAPS = ("down1", "down2", "down3", "mid", "up1", "up2", "up3")


@dataclass(frozen=True)
class Budget:
    """Desk-scale sizes for the paired ablations."""

    resolution: int = 32
    width: int = 16
    views: int = 4
    lr: float = 3e-3
    n_train_ids: int = 8
    poses_per_id: int = 3
    n_test_ids: int = 6
    steps: int = 300
    anim_triplets: int = 24
    eval_samples: int = 1000
    tau_cm: float = 5.0
    # trained desk-scale models spread density over semi-transparent layers
    eval_min_opacity: float = 0.1

    def config(self, seed: int, **kw) -> RunConfig:
        return RunConfig(resolution=self.resolution, width=self.width, views=self.views, lr=self.lr, seed=seed,
                         n_train_ids=self.n_train_ids, poses_per_id=self.poses_per_id, n_test_ids=self.n_test_ids,
                         steps_supervisor=self.steps, steps_ugl=self.steps, steps_cgt=self.steps,
                         steps_anim=self.steps, eval_samples=self.eval_samples, tau_cm=self.tau_cm,
                         eval_min_opacity=self.eval_min_opacity, **kw)


def geometry_runs(cfg: RunConfig, splits: P.DataSplits) -> tuple[dict, dict]:
    """Supervisor plus three geometry models: no regularization, mid&up taps, all-block taps.

    Returns (metrics per variant, trained nets).
    """
    jobs = {
        "supervisor": lambda: P.train_supervisor(splits.train_samples, cfg).net,
        "ugl_no_sfr": lambda: P.train_ugl(splits.train_samples, None, cfg.with_(alpha=0.0)).net,
        "ugl_sfr": lambda: P.train_ugl(splits.train_samples, nets["supervisor"], cfg).net,
        "ugl_all_block": lambda: P.train_ugl(splits.train_samples, nets["supervisor"],
                                             cfg.with_(sfr_taps=ALL_BLOCK_TAPS)).net,
    }
    nets, out = {}, {}
    for name, job in jobs.items():
        t0 = time.time()
        nets[name] = job()
        nets[name].freeze()
        m = P.evaluate_geometry_net(nets[name], splits.test_samples, cfg,
                                    "clean" if name == "supervisor" else "priors")
        m["cd"] = m["cd_p2s"] + m["cd_s2p"]
        m["seconds"] = time.time() - t0
        out[name] = m
    return out, nets


def cascade_runs(cfg: RunConfig, splits: P.DataSplits, ugl) -> dict:
    """Texture models trained on the geometry model's renders vs on scan normals, both evaluated
    through the same two-stage inference."""
    out = {}
    for mode in ("cascaded", "separate"):
        c = cfg.with_(cascade=mode)
        cgt = P.train_cgt(splits.train_samples, ugl, c).net
        report, _ = P.evaluate_pipeline(splits.test_samples, ugl, cgt, c)
        out[mode] = report.values()
    return out


def train_anim_model(cfg: RunConfig, splits: P.DataSplits, n_triplets: int):
    anim = P.train_anim(P.build_triplets(splits.train, n_triplets, cfg.seed, cfg.pose_scale), cfg).net
    anim.freeze()
    return anim


def augmentation_runs(cfg: RunConfig, splits: P.DataSplits, supervisor, anim) -> dict:
    """Geometry models trained half-and-half with LBS- or OAA-augmented samples."""
    out = {}
    for mode in ("lbs", "oaa"):
        c = cfg.with_(aug_mode=mode)
        aug = P.Augmenter(splits.train, splits.train_samples, splits.pool, anim, c)
        net = P.train_ugl(splits.train_samples, supervisor, c, augmenter=aug).net
        m = P.evaluate_geometry_net(net, splits.test_samples, c)
        m["cd"] = m["cd_p2s"] + m["cd_s2p"]
        out[mode] = m
    return out


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a > 0.5, b > 0.5
    union = (a | b).sum()
    return float((a & b).sum() / union) if union else 1.0


def oaa_template_iou(anim, cfg: RunConfig, splits: P.DataSplits, n: int = 8, seed: int = 0) -> list[float]:
    """Front-mask IoU between OAA outputs and the templates that drove them."""
    front = P.ortho_cams(cfg)[0]
    out = []
    for i in range(n):
        sample = splits.train_samples[i % len(splits.train_samples)]
        aug = P.augment_oaa(anim, sample, splits.pool, seed + i, cfg)
        tpl = rasterize(aug.template, front, "mask").pixels[..., 0]
        out.append(mask_iou(aug.render(front)["mask"], tpl))
    return out


def extreme_arm_poses() -> list[PoseParams]:
    """Each arm at its elbow bend/twist limits with the shoulder fully twisted, both signs."""
    frames = build_rig().frames()
    poses = []
    for upper, fore in ((4, 5), (6, 7)):
        for sign in (1.0, -1.0):
            local = np.zeros_like(DEFAULT_LIMITS)
            local[fore] = [DEFAULT_LIMITS[fore, 0], sign * DEFAULT_LIMITS[fore, 1], 0.0]
            local[upper] = [0.0, sign * DEFAULT_LIMITS[upper, 1], 0.0]
            poses.append(PoseParams(np.einsum("jab,jb->ja", frames, local)))
    return poses


def lbs_extreme_stretch(seed: int, n_identities: int = 2) -> list[float]:
    """Max edge stretch of LBS re-posing from rest to each extreme arm pose."""
    out = []
    for i in range(n_identities):
        body = make_identity(seed, "train", i)
        for pose in extreme_arm_poses():
            out.append(max_edge_stretch(body.mesh, lbs_repose(body, PoseParams(), pose)))
    return out


def paired_seed_run(seed: int, budget: Budget = Budget(), log=None) -> dict:
    """All ablation variants for one seed; returns a flat dict of metrics."""
    t0 = time.time()
    cfg = budget.config(seed)
    splits = P.make_splits(cfg)

    def note(msg):
        if log is not None:
            log(f"[seed {seed} {time.time() - t0:6.0f}s] {msg}")

    geo, nets = geometry_runs(cfg, splits)
    note("geometry done")
    casc = cascade_runs(cfg, splits, nets["ugl_sfr"])
    note("cascade done")
    anim = train_anim_model(cfg, splits, budget.anim_triplets)
    aug = augmentation_runs(cfg, splits, nets["supervisor"], anim)
    note("augmentation done")
    with T.no_grad():
        iou = oaa_template_iou(anim, cfg, splits, seed=seed)
    return {"seed": seed, "geometry": geo, "cascade": casc, "augmentation": aug, "oaa_iou": iou,
            "lbs_stretch": lbs_extreme_stretch(seed), "seconds": time.time() - t0}
