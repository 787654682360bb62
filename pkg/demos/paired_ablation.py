"""
Paired-seed ablation at desk scale
==================================

Trains the supervisor, three geometry models (no feature regularization,
mid&up taps, all-block taps), cascaded and separate texture models, and
LBS- vs OAA-augmented geometry models for each seed, then prints the
comparisons. One seed takes roughly a quarter of an hour on one CPU core.

    python demos/paired_ablation.py 0 1 --steps 150
"""

import argparse
import json

from monohuman.experiments import Budget, paired_seed_run

parser = argparse.ArgumentParser()
parser.add_argument("seeds", type=int, nargs="*", default=[0])
parser.add_argument("--steps", type=int, default=Budget().steps)
parser.add_argument("--json", help="write all numbers here")
args = parser.parse_args()

budget = Budget(steps=args.steps)
rows = [paired_seed_run(s, budget, log=print) for s in args.seeds]

for r in rows:
    g, c, a = r["geometry"], r["cascade"], r["augmentation"]
    print(f"\nseed {r['seed']} ({r['seconds'] / 60:.1f} min)")
    print(f"  normal PSNR   supervisor {g['supervisor']['psnr']:.2f}  monocular {g['ugl_no_sfr']['psnr']:.2f}")
    print(f"  CD            no SFR {g['ugl_no_sfr']['cd']:.2f}  mid&up {g['ugl_sfr']['cd']:.2f}"
          f"  all-block {g['ugl_all_block']['cd']:.2f}")
    print(f"  PSNR front    cascaded {c['cascaded']['psnr_front']:.2f}  separate {c['separate']['psnr_front']:.2f}")
    print(f"  f-score       LBS {a['lbs']['fscore']:.2f}  OAA {a['oaa']['fscore']:.2f}")
    print(f"  LBS stretch   {max(r['lbs_stretch']):.2f}x   OAA template IoU {min(r['oaa_iou']):.2f}")

if args.json:
    with open(args.json, "w") as fh:
        json.dump(rows, fh, indent=1)
