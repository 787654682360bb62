"""Command line entry point.

Every command accepts ``--config``, ``--seed`` and ``--out``. Exit codes: 0 on
success, 1 on usage or configuration errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as P
from .body import save_skin, write_manifest
from .config import ConfigError, RunConfig, load_config
from .gaussians import load_gaussians, save_gaussians
from .imageio import save_png
from .mesh import load_obj, save_obj
from .raster import render_all
from .splat import camera_normal_render, splat_render

COMMANDS = ("gen-data", "train-supervisor", "train-ugl", "train-cgt", "train-anim", "augment-preview",
            "reconstruct", "evaluate", "render", "grad-check", "selftest")


STEP_FIELDS = {"train-supervisor": "steps_supervisor", "train-ugl": "steps_ugl", "train-cgt": "steps_cgt",
               "train-anim": "steps_anim"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monohuman", description="Monocular clothed-human Gaussian reconstruction at desk scale.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config 'out')")
    common.add_argument("--resolution", type=int)
    common.add_argument("--views", type=int, help="supervision views per step")
    common.add_argument("--steps", type=int, help="override the stage's step budget")

    def add(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    add("gen-data", "write the procedural scan corpus, skin sidecars and manifests")
    add("train-supervisor", "train the multi-view supervisor on clean normal maps")
    p = add("train-ugl", "train the monocular geometry model")
    p.add_argument("--ckpt-supervisor")
    p.add_argument("--alpha", type=float)
    p.add_argument("--mode", choices=("none", "lbs", "oaa"))
    p.add_argument("--ckpt-anim")
    p = add("train-cgt", "train the texture model")
    p.add_argument("--ckpt-ugl")
    p.add_argument("--cascade", choices=("cascaded", "separate"))
    add("train-anim", "train the animation model on pose triplets")
    p = add("augment-preview", "write 4-view strips of augmented samples")
    p.add_argument("--mode", choices=("lbs", "oaa"), required=True)
    p.add_argument("--ckpt-anim")
    p.add_argument("--count", type=int, default=2)
    p = add("reconstruct", "two-stage inference on held-out samples")
    p.add_argument("--ckpt-ugl", required=True)
    p.add_argument("--ckpt-cgt", required=True)
    p.add_argument("--index", type=int, default=0)
    p = add("evaluate", "metrics report over a split")
    p.add_argument("--ckpt-ugl", required=True)
    p.add_argument("--ckpt-cgt", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p = add("render", "render a mesh (.obj) or Gaussian file (.gs) from the four orthogonal views")
    p.add_argument("input")
    p.add_argument("--kind", choices=("rgb", "normal"), default="rgb")
    add("grad-check", "gradient checks for every op and the splatting renderer")
    add("selftest", "gradient checks plus the oracle suites")
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    over = {}
    for key in ("seed", "out", "resolution", "views", "alpha"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "cascade", None):
        over["cascade"] = args.cascade
    if args.command == "train-ugl" and args.mode:
        over["aug_mode"] = args.mode
    if args.steps is not None and args.command in STEP_FIELDS:
        over[STEP_FIELDS[args.command]] = args.steps
    return cfg.with_(**over)


def _out_dir(cfg: RunConfig, stage: str) -> Path:
    d = P.run_dir(cfg, stage)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(path, flag):
    if not path:
        raise UsageError(f"{flag} is required")
    if not Path(path).exists():
        raise FileNotFoundError(f"{flag}: no such file '{path}'")
    return path


def _finish(res: P.TrainResult, cfg: RunConfig) -> Path:
    d = res.save()
    print(f"{res.stage}: {len(res.losses)} steps, loss {res.losses[0]:.4f} -> {res.losses[-1]:.4f}" if res.losses
          else f"{res.stage}: 0 steps")
    print(f"checkpoint: {d / 'model.ckpt'}")
    return d


def cmd_gen_data(args, cfg):
    out = Path(cfg.out) / "data"
    sp = P.make_splits(cfg)
    for split, samples in (("train", sp.train), ("test", sp.test)):
        mesh_dir = out / split / "meshes"
        mesh_dir.mkdir(parents=True, exist_ok=True)
        done = set()
        for s in samples:
            save_obj(s.scan, mesh_dir / f"{s.sample_id}.obj")
            if s.identity not in done:
                save_skin(s.skinned, out / split / f"identity-{s.identity:03d}.skin")
                done.add(s.identity)
        write_manifest(samples, out / split / "manifest.txt")
        print(f"{split}: {len(samples)} scans, {len(done)} identities -> {out / split}")
    (out / "config.txt").write_text(cfg.to_text())
    return 0


def cmd_train_supervisor(args, cfg):
    sp = P.make_splits(cfg)
    _finish(P.train_supervisor(sp.train_samples, cfg, cfg.steps_supervisor), cfg)
    return 0


def cmd_train_ugl(args, cfg):
    sp = P.make_splits(cfg)
    sup = None
    if cfg.alpha > 0:
        sup, _ = P.load_stage(_need(args.ckpt_supervisor, "--ckpt-supervisor"), cfg)
    aug = None
    if cfg.aug_mode != "none":
        anim = P.load_stage(_need(args.ckpt_anim, "--ckpt-anim"), cfg)[0] if cfg.aug_mode == "oaa" else None
        aug = P.Augmenter(sp.train, sp.train_samples, sp.pool, anim, cfg)
    _finish(P.train_ugl(sp.train_samples, sup, cfg, aug, cfg.steps_ugl), cfg)
    return 0


def cmd_train_cgt(args, cfg):
    sp = P.make_splits(cfg)
    ugl = None
    if cfg.cascade == "cascaded":
        ugl, _ = P.load_stage(_need(args.ckpt_ugl, "--ckpt-ugl"), cfg)
    _finish(P.train_cgt(sp.train_samples, ugl, cfg, cfg.steps_cgt), cfg)
    return 0


def cmd_train_anim(args, cfg):
    sp = P.make_splits(cfg)
    triplets = P.build_triplets(sp.train, max(len(sp.train), 8), cfg.seed, cfg.pose_scale)
    _finish(P.train_anim(triplets, cfg, cfg.steps_anim), cfg)
    return 0


def _strip(images) -> np.ndarray:
    return np.concatenate([np.clip(im, 0, 1) for im in images], axis=1)


def cmd_augment_preview(args, cfg):
    sp = P.make_splits(cfg)
    out = _out_dir(cfg, f"augment-{args.mode}")
    cams = P.ortho_cams(cfg)
    anim = P.load_stage(_need(args.ckpt_anim, "--ckpt-anim"), cfg)[0] if args.mode == "oaa" else None
    rng = np.random.default_rng([cfg.seed, P.STAGE_CODES["aug"]])
    for k in range(args.count):
        i = int(rng.integers(len(sp.train)))
        seed = int(rng.integers(2 ** 31))
        if args.mode == "lbs":
            aug = P.augment_lbs(sp.train[i], sp.pool, seed)
        else:
            aug = P.augment_oaa(anim, sp.train_samples[i], sp.pool, seed, cfg)
        rows = [_strip(sp.train_samples[i].render_views(cams, "rgb")), _strip(aug.render_views(cams, "rgb")),
                _strip([render_all(aug.template, c)["normal"] for c in cams])]
        path = out / f"{k:02d}-{aug.sample_id}.png"
        save_png(np.concatenate(rows, axis=0), path)
        print(f"wrote {path}")
    return 0


def cmd_reconstruct(args, cfg):
    ugl, _ = P.load_stage(_need(args.ckpt_ugl, "--ckpt-ugl"), cfg)
    cgt, _ = P.load_stage(_need(args.ckpt_cgt, "--ckpt-cgt"), cfg)
    sp = P.make_splits(cfg)
    if not 0 <= args.index < len(sp.test_samples):
        raise UsageError(f"--index must lie in [0, {len(sp.test_samples)})")
    s = sp.test_samples[args.index]
    normal_gs, color_gs = P.reconstruct(s, ugl, cgt, cfg, P.eval_prior_seed(cfg, args.index))
    out = _out_dir(cfg, "reconstruct")
    save_gaussians(normal_gs, out / f"{s.sample_id}-normal.gs")
    save_gaussians(color_gs, out / f"{s.sample_id}-color.gs")
    cams = P.ortho_cams(cfg)
    rgb = [splat_render(color_gs, c).color.data for c in cams]
    nrm = [camera_normal_render(normal_gs, c).color.data for c in cams]
    save_png(np.concatenate([_strip(rgb), _strip(s.render_views(cams, "rgb")), _strip(nrm)], axis=0),
             out / f"{s.sample_id}.png")
    print(f"{s.sample_id}: {len(normal_gs)} normal and {len(color_gs)} colour Gaussians -> {out}")
    return 0


def cmd_evaluate(args, cfg):
    ugl, _ = P.load_stage(_need(args.ckpt_ugl, "--ckpt-ugl"), cfg)
    cgt, _ = P.load_stage(_need(args.ckpt_cgt, "--ckpt-cgt"), cfg)
    sp = P.make_splits(cfg)
    samples = sp.test_samples if args.split == "test" else sp.train_samples
    report, _ = P.evaluate_pipeline(samples, ugl, cgt, cfg)
    report.meta["split"] = args.split
    out = _out_dir(cfg, "evaluate")
    P.write_report(report, out / f"metrics-{args.split}.json")
    print(report.table())
    print(f"report: {out / f'metrics-{args.split}.json'}")
    return 0 if report.is_finite() else 2


def cmd_render(args, cfg):
    path = Path(args.input)
    if not path.exists():
        raise FileNotFoundError(f"no such file '{path}'")
    cams = P.ortho_cams(cfg)
    if path.suffix == ".obj":
        mesh = load_obj(path)
        imgs = [render_all(mesh, c)[args.kind] for c in cams]
    else:
        gs = load_gaussians(path)
        fn = camera_normal_render if args.kind == "normal" else splat_render
        imgs = [fn(gs, c).color.data for c in cams]
    out = _out_dir(cfg, "render")
    dest = out / f"{path.stem}-{args.kind}.png"
    save_png(_strip(imgs), dest)
    print(f"wrote {dest}")
    return 0


def _report(groups) -> int:
    from .selftest import run_all

    ok_all = True
    for group, rows in run_all(groups).items():
        ok = all(r.ok for r in rows)
        ok_all &= ok
        for r in rows:
            if not r.ok:
                print(f"  {r.line()}", file=sys.stderr)
        worst = max((r.value for r in rows), default=0.0)
        print(f"{'PASS' if ok else 'FAIL'}  {group} ({len(rows)} checks, worst {worst:.3g})")
    return 0 if ok_all else 2


def cmd_grad_check(args, cfg):
    return _report(["ops", "splat-grad"])


def cmd_selftest(args, cfg):
    return _report(None)


HANDLERS = {
    "gen-data": cmd_gen_data, "train-supervisor": cmd_train_supervisor, "train-ugl": cmd_train_ugl,
    "train-cgt": cmd_train_cgt, "train-anim": cmd_train_anim, "augment-preview": cmd_augment_preview,
    "reconstruct": cmd_reconstruct, "evaluate": cmd_evaluate, "render": cmd_render,
    "grad-check": cmd_grad_check, "selftest": cmd_selftest,
}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
    except (UsageError, ConfigError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except OSError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    t0 = time.time()
    try:
        code = HANDLERS[args.command](args, cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (P.ContractError, P.TrainingDiverged, FileNotFoundError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    log = Path(cfg.out) / "commands.log"
    log.parent.mkdir(parents=True, exist_ok=True)
    with open(log, "a") as fh:
        fh.write(json.dumps({"time": time.strftime("%Y-%m-%dT%H:%M:%S"), "argv": list(argv or sys.argv[1:]),
                             "seconds": round(time.time() - t0, 2), "exit": code}) + "\n")
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
