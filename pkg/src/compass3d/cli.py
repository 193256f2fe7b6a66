"""Command-line entry point.

Commands: synth, train, eval, predict, gradcheck, bench. Every command is
deterministic given (config, seed). Exit codes: 0 ok, 2 config error,
3 I/O error, 4 model/shape error. COMPASS_THREADS caps worker counts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, formats, geometry
from .runconfig import ConfigError, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_MODEL = 4

ABLATION_FLAGS = {
    "no_ici": "use_ici",
    "no_bcr": "use_bcr",
    "no_bg_token": "use_background_token",
    "no_grp_loss": "use_group_loss",
    "no_gated_prop": "use_gated_propagation",
    "no_tg": "use_tg",
    "no_tp": "use_tp",
}


def _add_config_arg(p):
    p.add_argument("-c", "--config", type=Path, default=None,
                   help="TOML run configuration (defaults: built-in micro scale)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the top-level seed")


def _add_ablation_flags(p):
    p.add_argument("--no-ici", action="store_true",
                   help="disable instance-bounded cross injection")
    p.add_argument("--no-bcr", action="store_true",
                   help="disable both contrastive refinement losses")
    p.add_argument("--no-bg-token", action="store_true",
                   help="drop the learnable background key/value token")
    p.add_argument("--no-grp-loss", action="store_true",
                   help="disable the region relevance loss")
    p.add_argument("--no-gated-prop", action="store_true",
                   help="disable gated region-to-point propagation")
    p.add_argument("--no-tg", action="store_true",
                   help="disable the text-group contrastive loss")
    p.add_argument("--no-tp", action="store_true",
                   help="disable the text-point contrastive loss")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="compass3d",
        description="Multi-object intent-conditioned 3D affordance grounding "
                    "at desk scale")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a dataset")
    _add_config_arg(p)
    p.add_argument("-o", "--out", type=Path, required=True, help="output directory")
    p.add_argument("--scenes", type=int, default=None,
                   help="override the train-scene count")
    p.add_argument("--test-scenes", type=int, default=None,
                   help="override the test-scene count")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the configuration and print it without building")

    p = sub.add_parser("train", help="train a model")
    _add_config_arg(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--out", type=Path, required=True, help="run output directory")
    p.add_argument("--resume", type=Path, default=None,
                   help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, default=None, help="override epoch count")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines")
    _add_ablation_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint or prediction files")
    _add_config_arg(p)
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    p.add_argument("--ckpt", type=Path, default=None, help="checkpoint file")
    p.add_argument("--predictions", type=Path, default=None,
                   help="directory of CMPM prediction files named by query id")
    p.add_argument("--oracle", action="store_true",
                   help="score the ground truth against itself (sanity bound)")
    p.add_argument("--split", choices=["seen", "unseen", "negatives"],
                   default="seen")
    p.add_argument("--report", type=Path, default=None, help="write JSON report here")

    p = sub.add_parser("predict", help="predict a heatmap for one scene + query")
    _add_config_arg(p)
    p.add_argument("--scene", type=Path, default=None, help="scene .cmps file")
    p.add_argument("--depth", type=Path, default=None,
                   help="depth map .npy (meters); requires --mask/--intrinsics")
    p.add_argument("--mask", type=Path, default=None, help="pixel mask .npy")
    p.add_argument("--intrinsics", type=str, default=None,
                   help="pinhole intrinsics fx,fy,cx,cy")
    p.add_argument("--query", type=str, required=True, help="intent query text")
    p.add_argument("--ckpt", type=Path, required=True, help="checkpoint file")
    p.add_argument("--out", type=Path, required=True, help="output .cmpm path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=20,
                   help="seeds per op/loss check")
    p.add_argument("--objective-repeats", type=int, default=20,
                   help="seeds for the full-objective check")

    p = sub.add_parser("bench", help="geometry kernel timing: compiled vs python")
    p.add_argument("--sizes", type=str, default="512,2048,8192",
                   help="comma-separated cloud sizes")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--json", type=Path, default=None, help="write results here")

    return ap


# ---------------------------------------------------------------------------
# command bodies


def cmd_synth(args) -> int:
    from .synth import build_dataset

    cfg = load_config(args.config, {
        "seed": args.seed,
        "synth.train_scenes": args.scenes,
        "synth.test_scenes": args.test_scenes,
    })
    if args.dry_run:
        print(json.dumps(cfg.echo()["synth"], indent=2, sort_keys=True))
        return EXIT_OK
    manifest = build_dataset(cfg.synth, args.out)
    print(json.dumps({"out": str(args.out), "counts": manifest["counts"],
                      "seed": manifest["seed"]}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import ModelConfig
    from .synth.dataset import DatasetView
    from .train import train_loop

    cfg = load_config(args.config, {
        "seed": args.seed,
        "train.epochs": args.epochs,
        **{f"model.{attr}": (False if getattr(args, flag) else None)
           for flag, attr in ABLATION_FLAGS.items() if attr.startswith("use_")},
    })
    if args.seed is not None:
        cfg.train.seed = args.seed
    ds = DatasetView.open(args.data)
    model_cfg = ModelConfig(**{**cfg.model.to_dict(), "vocab": ds.vocabulary()})
    result = train_loop(args.data, cfg.train, args.out, model_cfg=model_cfg,
                        loss_cfg=cfg.loss, resume=args.resume,
                        quiet=args.quiet)
    print(json.dumps({"checkpoint": str(result.checkpoint),
                      "steps": result.steps,
                      "final_loss": result.final_loss}, sort_keys=True))
    return EXIT_OK


_SPLIT_MAP = {"seen": "test_seen", "unseen": "test_unseen",
              "negatives": "negatives"}


def cmd_eval(args) -> int:
    from .metrics import evaluate_split
    from .train import load_model_for_inference

    cfg = load_config(args.config, {"seed": args.seed})
    model = None
    if args.ckpt is not None:
        model, _meta = load_model_for_inference(args.ckpt)
    report = evaluate_split(
        args.data, _SPLIT_MAP[args.split], model=model,
        predictions_dir=args.predictions, oracle=args.oracle,
        report_path=args.report, config_echo=cfg.echo())
    print(json.dumps({k: report[k] for k in
                      ("split", "counts", "metrics", "abstention")},
                     indent=2, sort_keys=True))
    return EXIT_OK


def _parse_intrinsics(text: str) -> geometry.CameraIntrinsics:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise ConfigError("--intrinsics expects fx,fy,cx,cy")
    return geometry.CameraIntrinsics(*parts)


def cmd_predict(args) -> int:
    from .model import GeometryCache
    from .train import load_model_for_inference

    cfg = load_config(args.config, {"seed": args.seed})
    model, _meta = load_model_for_inference(args.ckpt)
    if args.scene is not None:
        points_f32, labels, _k = formats.read_scene(args.scene)
        points = points_f32.astype(np.float64)
    elif args.depth is not None:
        if args.mask is None or args.intrinsics is None:
            raise ConfigError("--depth requires --mask and --intrinsics")
        depth = np.load(args.depth)
        mask = np.load(args.mask).astype(bool)
        intr = _parse_intrinsics(args.intrinsics)
        lifted = geometry.backproject_depth(depth, mask, intr)
        # match the scene-file precision so the depth path and a saved
        # point-cloud path are bit-identical
        points = lifted.astype(np.float32).astype(np.float64)
        labels = geometry.radius_connected_components(
            points, cfg.synth.component_radius)
    else:
        raise ConfigError("pass either --scene or --depth/--mask/--intrinsics")
    cache = GeometryCache(model.cfg)
    geom = cache.get("predict", points, labels)
    out = model.forward(geom, args.query, mode="infer")
    heatmap = out.heatmap_values
    formats.write_mask(args.out, heatmap)
    print(json.dumps({
        "out": str(args.out),
        "n_points": int(heatmap.size),
        "objects": int(labels.max()) + 1,
        "mean_activation": float(heatmap.mean()),
        "max_activation": float(heatmap.max()),
        "query": args.query,
    }, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import TOLERANCE, run_suite

    results = run_suite(base_seed=args.seed, repeats=args.repeats,
                        objective_repeats=args.objective_repeats)
    width = max(len(r.name) for r in results)
    all_pass = True
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        all_pass &= r.passed
        print(f"{r.name:<{width}}  {r.max_rel_err:10.3e}  (<{TOLERANCE:g}, "
              f"{r.seeds} seeds)  {status}")
    print("gradient check:", "PASS" if all_pass else "FAIL")
    return EXIT_OK if all_pass else 1


def cmd_bench(args) -> int:
    from .bench import run_bench

    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    rows = run_bench(sizes, repeats=args.repeats)
    for row in rows:
        print(f"{row['kernel']:<22} N={row['n']:<6} {row['backend']:<7} "
              f"{row['ms']:9.2f} ms   x{row['speedup']:.1f}")
    if args.json is not None:
        formats.dump_json(args.json, {"results": rows,
                                      "backends": geometry.available_backends()})
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "synth": cmd_synth,
        "train": cmd_train,
        "eval": cmd_eval,
        "predict": cmd_predict,
        "gradcheck": cmd_gradcheck,
        "bench": cmd_bench,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (formats.FormatError, ValueError, KeyError) as exc:
        print(f"model/data error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
