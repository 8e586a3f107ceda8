"""Command-line front end.

Subcommands: gen-data, fcm, gradcheck, train, eval, ablate.  Exit codes:
0 success, 2 configuration or input error, 3 numeric failure.  The
FUZZYSEG_THREADS environment variable sets how many study arms train in
parallel during ablate (default 1).
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import dataset as dataset_mod
from . import fcm as fcm_mod
from . import figures, gradcheck, tensor_io
from .config import make_run_config
from .errors import (
    CheckpointError,
    ConfigurationError,
    DegenerateClusterError,
    InvalidInputError,
    NumericFailureError,
)
from .pgm import load_pgm, save_labels_pgm
from .phantoms import PhantomConfig
from .train import evaluate_checkpoint, run_ablation, train_run


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    """Training settings; every flag defaults to None so only explicitly
    passed flags override the config file."""
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("--model", choices=["unet", "unetpp"])
    parser.add_argument("--loss", choices=["cce", "fcce", "dsv"])
    parser.add_argument("--membership-source", choices=["fcm_fixed", "prediction", "blend"])
    parser.add_argument("--entropy-weight", type=float)
    parser.add_argument("--blend-beta", type=float)
    parser.add_argument("--deep-supervision", action="store_true", default=None)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--lr", type=float, dest="learning_rate")
    parser.add_argument("--patience", type=int, dest="early_stopping_patience")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--depth", type=int)
    parser.add_argument("--base-channels", type=int)
    parser.add_argument("--classes", type=int, dest="num_classes")
    parser.add_argument("--dropout", type=float, dest="dropout_rate")
    parser.add_argument("--split", type=float, dest="split_fraction")
    parser.add_argument("--overfit", action="store_true", default=None)


def _run_overrides(args, data, out) -> dict:
    keys = ("model", "loss", "membership_source", "entropy_weight", "blend_beta",
            "deep_supervision", "epochs", "batch_size", "learning_rate",
            "early_stopping_patience", "seed", "depth", "base_channels",
            "num_classes", "dropout_rate", "split_fraction", "overfit")
    overrides = {k: getattr(args, k) for k in keys}
    overrides["dataset_dir"] = data
    overrides["out_dir"] = out
    return overrides


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fuzzyseg",
        description="Toy-scale fuzzy-entropy segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a phantom dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--blur", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.03)
    p.add_argument("--no-memberships", action="store_true",
                   help="skip the per-image clustering cache")
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("fcm", help="cluster one PGM image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--fuzzifier", type=float, default=2.0)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a segmentation model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_run_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="per-seed CCE vs FCCE comparison")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2,3,4",
                   help="comma-separated run seeds (at least 3)")
    p.add_argument("--weights", default="0.1,0.5",
                   help="comma-separated entropy weights for the fcce arms")
    _add_run_flags(p)
    return parser


def _threads_from_env() -> int:
    raw = os.environ.get("FUZZYSEG_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(f"FUZZYSEG_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigurationError(f"FUZZYSEG_THREADS must be >= 1, got {value}")
    return value


def _cmd_gen_data(args) -> int:
    config = PhantomConfig(size=args.size, num_classes=args.classes,
                           blur_sigma=args.blur, noise_sigma=args.noise)
    data = dataset_mod.build_dataset(config, args.count, args.seed,
                                     with_memberships=not args.no_memberships)
    dataset_mod.save_dataset(args.out, data, config)
    print(f"wrote {len(data)} images to {args.out}")
    if not args.no_figures:
        figures.phantom_montage(data.images, data.labels, data.num_classes,
                                os.path.join(args.out, "montage.png"))
    return 0


def _cmd_fcm(args) -> int:
    image = load_pgm(args.image)  # already scaled to [0, 1]
    cfg = fcm_mod.FcmConfig(num_clusters=args.clusters, fuzzifier=args.fuzzifier,
                            max_iterations=args.max_iter, tolerance=args.tol,
                            seed=args.seed)
    result = fcm_mod.run(image.ravel(), cfg)
    os.makedirs(args.out, exist_ok=True)
    memberships = result.memberships.reshape(args.clusters, *image.shape)
    tensor_io.save_array(os.path.join(args.out, "memberships.bin"), memberships)
    save_labels_pgm(os.path.join(args.out, "labels.pgm"),
                    np.argmax(memberships, axis=0))
    report = [
        f"converged = {result.converged}",
        f"iterations = {result.iterations_used}",
        f"objective = {result.objective!r}",
        "centroids = " + " ".join(repr(float(c)) for c in result.centroids),
    ]
    with open(os.path.join(args.out, "fcm.txt"), "w", encoding="ascii") as fh:
        fh.write("\n".join(report) + "\n")
    print("iter,objective")
    for i, value in enumerate(result.objective_trace):
        print(f"{i},{value!r}")
    return 0


def _cmd_gradcheck(args) -> int:
    results = gradcheck.full_suite(seed=args.seed, instances=args.instances)
    print("mode,max_rel_err")
    for r in results:
        print(f"{r.name},{r.max_rel_error!r}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise NumericFailureError(
            f"gradient check failed for {', '.join(failed)} "
            f"(tolerance {results[0].tolerance:g})")
    return 0


def _cmd_train(args) -> int:
    cfg = make_run_config(args.config, _run_overrides(args, args.data, args.out))
    data = dataset_mod.load_dataset(cfg.dataset_dir)
    outcome = train_run(cfg, data)
    best = outcome.best_record
    print(f"trained {len(outcome.records)} epochs"
          + (" (stopped early)" if outcome.stopped_early else ""))
    print(f"best epoch {outcome.best_epoch}: "
          f"val AC {best.ac_val:.4f}  val DC {best.dc_val:.4f}  val IoU {best.iou_val:.4f}")
    print(f"artifacts in {cfg.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    data = dataset_mod.load_dataset(args.data)
    result = evaluate_checkpoint(args.ckpt, data, out_dir=args.out)
    print(f"AC {result.ac:.4f}  DC {result.dc:.4f}  IoU {result.iou:.4f}")
    per_class = "  ".join(f"{v:.4f}" for v in result.dc_per_class)
    print(f"per-class DC: {per_class}")
    print(f"predicted maps in {args.out}")
    return 0


def _cmd_ablate(args) -> int:
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        weights = [float(w) for w in args.weights.split(",") if w.strip()]
    except ValueError:
        raise ConfigurationError(
            f"--seeds/--weights must be comma-separated numbers, got "
            f"{args.seeds!r} / {args.weights!r}") from None
    cfg = make_run_config(args.config, _run_overrides(args, args.data, args.out))
    data = dataset_mod.load_dataset(cfg.dataset_dir)
    result = run_ablation(cfg, seeds, data, entropy_weights=tuple(weights),
                          threads=_threads_from_env())
    print(f"fcce wins (val DC >= cce): {result.wins}/{result.seeds_compared}")
    print(f"mean val DC difference (fcce - cce): {result.mean_dc_difference:+.4f}")
    print(f"table in {result.csv_path}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "fcm": _cmd_fcm,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigurationError, InvalidInputError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericFailureError, DegenerateClusterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
