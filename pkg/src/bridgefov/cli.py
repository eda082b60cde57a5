"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import config as config_mod
from . import harness
from .io import DatasetManifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bridgefov",
        description="CT field-of-view extension lab: simulate, reconstruct, "
                    "train and sample a paired-image diffusion bridge.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config file (INI); defaults otherwise")
        p.add_argument("--seed", type=int, help="override the master seed")
        p.add_argument("--out", help="override the output directory")
        return p

    common(sub.add_parser("config-dump", help="print the effective configuration"))

    g = common(sub.add_parser("generate", help="simulate the dataset"))
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-val", type=int)
    g.add_argument("--n-test", type=int)

    t = common(sub.add_parser("train", help="train the bridge denoiser"))
    t.add_argument("--manifest")
    t.add_argument("--no-resume", action="store_true")

    s = common(sub.add_parser("sample", help="sample the test split and report metrics"))
    s.add_argument("--manifest")
    s.add_argument("--checkpoint")
    s.add_argument("--split", default="test")
    s.add_argument("--nfe", type=int)

    n = common(sub.add_parser("nfe-sweep", help="quality/timing across NFE values"))
    n.add_argument("--manifest")
    n.add_argument("--checkpoint")
    n.add_argument("--nfe-list", help="comma-separated, e.g. 1,5,10,25")

    b = common(sub.add_parser("bench", help="median inference time comparison"))
    b.add_argument("--manifest")
    b.add_argument("--checkpoint")
    b.add_argument("--repeats", type=int, default=20)

    u = common(sub.add_parser("uncertainty", help="pixelwise spread over repeated sampling"))
    u.add_argument("--manifest")
    u.add_argument("--checkpoint")
    u.add_argument("--n-seeds", type=int, default=8)
    u.add_argument("--nfe", type=int)

    e = common(sub.add_parser("eval-baselines", help="metrics for FBP and the WCE input"))
    e.add_argument("--manifest")
    e.add_argument("--split", default="test")
    return parser


def _load_config(args) -> config_mod.ExperimentConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg = config_mod.ExperimentConfig(**{**cfg.__dict__, "master_seed": args.seed})
    if args.out is not None:
        cfg = config_mod.ExperimentConfig(**{**cfg.__dict__, "out_dir": args.out})
    return cfg.validate()


def _manifest(args, cfg) -> DatasetManifest:
    path = args.manifest or os.path.join(cfg.out_dir, "manifest.json")
    return DatasetManifest.load(path)


def _checkpoint(args, cfg) -> str:
    path = getattr(args, "checkpoint", None) or os.path.join(
        cfg.out_dir, "checkpoints", "final.ckpt")
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return path


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out = cfg.out_dir

        if args.command == "config-dump":
            sys.stdout.write(config_mod.dumps(cfg))
            return 0

        if args.command == "generate":
            manifest = harness.cmd_generate(cfg, out, args.n_train, args.n_val, args.n_test)
            print(f"wrote {len(manifest.entries)} pairs under {out}")
            return 0

        if args.command == "train":
            path = harness.cmd_train(cfg, _manifest(args, cfg), out,
                                     resume=not args.no_resume)
            print(f"checkpoint: {path}")
            return 0

        if args.command == "sample":
            reports, per_image = harness.cmd_sample(
                cfg, _checkpoint(args, cfg), _manifest(args, cfg), out,
                split=args.split, nfe=args.nfe, seed=args.seed)
            rmse = harness.aggregate(reports, "full")
            print(f"aggregate RMSE {rmse:.1f} HU, {per_image*1e3:.0f} ms/image")
            return 0

        if args.command == "nfe-sweep":
            nfe_list = ([int(v) for v in args.nfe_list.split(",")]
                        if args.nfe_list else None)
            rows = harness.cmd_nfe_sweep(cfg, _checkpoint(args, cfg),
                                         _manifest(args, cfg), out,
                                         nfe_list=nfe_list, seed=args.seed)
            for r in rows:
                print(f"nfe {r['nfe']:3d}: RMSE {r['rmse_hu']:.1f} HU  "
                      f"{r['seconds_per_image']*1e3:.0f} ms/image")
            return 0

        if args.command == "bench":
            rows = harness.cmd_bench(cfg, _checkpoint(args, cfg),
                                     _manifest(args, cfg), out, repeats=args.repeats)
            for r in rows:
                print(f"{r['method']:>18}: {r['seconds_per_image']*1e3:8.1f} ms "
                      f"({r['ratio_vs_nfe1']:.1f}x one-step)")
            return 0

        if args.command == "uncertainty":
            stats, _ = harness.cmd_uncertainty(cfg, _checkpoint(args, cfg),
                                               _manifest(args, cfg), out,
                                               n_seeds=args.n_seeds, nfe=args.nfe)
            print(f"nfe {stats['nfe']}: mean std {stats['mean_std_hu']:.3f} HU, "
                  f"max {stats['max_std_hu']:.3f} HU")
            return 0

        if args.command == "eval-baselines":
            reports = harness.cmd_eval_baselines(cfg, _manifest(args, cfg), out,
                                                 split=args.split)
            for method in ("fbp", "wce"):
                sel = [r for r in reports if r.method == method and r.region == "full"]
                rmse = sum(r.rmse_hu for r in sel) / len(sel)
                print(f"{method}: RMSE {rmse:.1f} HU")
            return 0

        raise AssertionError(f"unhandled command {args.command}")
    except config_mod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (OSError, FileNotFoundError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())
