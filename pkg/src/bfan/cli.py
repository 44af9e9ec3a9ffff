"""Command-line entry point: ``bfan <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data/decode error, 3 contract violation.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation, DecodeError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CONTRACT = 0, 1, 2, 3

log = logging.getLogger("bfan")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bfan", description="Boundary-guided feature aggregation network for saliency detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset and manifest")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--size", type=int, default=64, help="square image size, multiple of 32")
    g.add_argument("--seed", type=int, default=0, help="RNG seed")
    g.add_argument("--split", choices=("train", "test"), default="train", help="split tag written to the manifest")
    g.add_argument("--out", required=True, help="output directory")

    b = sub.add_parser("gen-boundary", help="derive Canny boundary labels from mask graymaps")
    b.add_argument("--masks-dir", required=True, help="directory of *.pgm masks")
    b.add_argument("--out", required=True, help="output directory for boundary graymaps")
    b.add_argument("--sigma", type=float, default=1.0, help="Gaussian smoothing sigma")
    b.add_argument("--low", type=float, default=0.1, help="low hysteresis threshold (normalized)")
    b.add_argument("--high", type=float, default=0.3, help="high hysteresis threshold (normalized)")

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--config", help="key = value run config file")
    t.add_argument("--manifest", required=True, help="training manifest")
    t.add_argument("--epochs", type=int, help="epoch budget (overrides config)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    t.add_argument("--out", required=True, help="output directory for checkpoints and loss.csv")

    i = sub.add_parser("infer", help="write saliency graymaps for a directory of images or a manifest")
    i.add_argument("--checkpoint", required=True, help="checkpoint file")
    i.add_argument("--images", required=True, help="directory of *.ppm/*.pgm images, or a manifest file")
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--config", help="expected run config; refuses a checkpoint whose architecture differs")
    i.add_argument("--dump-boundary", action="store_true", help="also write per-scale boundary maps")

    e = sub.add_parser("eval", help="score predicted graymaps against ground truth")
    e.add_argument("--pred-dir", required=True, help="directory of predicted *.pgm maps")
    e.add_argument("--gt-dir", required=True, help="directory of ground-truth *.pgm masks")
    e.add_argument("--out", required=True, help="output directory for report.csv and pr_curve.csv")

    c = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    c.add_argument("--op", action="append", metavar="NAME", help="restrict to one op (repeatable); 'model' for the full network")
    c.add_argument("--seeds", type=int, default=10, help="random seeds per op")

    a = sub.add_parser("ablate", help="train the four ablation variants and compare them")
    a.add_argument("--config", help="key = value run config file")
    a.add_argument("--manifest", required=True, help="training manifest")
    a.add_argument("--test-manifest", help="held-out manifest (default: evaluate on the training set)")
    a.add_argument("--epochs", type=int, help="epoch budget (overrides config)")
    a.add_argument("--seeds", type=int, nargs="+", default=[0], help="seeds to average over")
    a.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    a.add_argument("--out", required=True, help="output directory")
    return p


def _load_run(config: str | None, overrides: list[str]):
    from .config import RunConfig

    run = RunConfig.load(config) if config else RunConfig()
    kv = {}
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        kv[k.strip()] = v.strip()
    return run.with_overrides(kv) if kv else run


def cmd_gen_data(args) -> int:
    from .data import gen_synthetic, write_dataset

    samples = gen_synthetic(args.n, args.size, args.seed, prefix=f"{args.split}_")
    man = write_dataset(samples, args.out, args.split)
    print(f"wrote {len(man)} samples to {args.out}")
    return EXIT_OK


def cmd_gen_boundary(args) -> int:
    from .boundary_gt import canny_boundary
    from .data import mask_from_gray, mask_to_gray, read_pnm, write_pnm

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(args.masks_dir).glob("*.pgm"))
    for p in paths:
        m = mask_from_gray(read_pnm(p))
        write_pnm(out / p.name, mask_to_gray(canny_boundary(m, args.sigma, args.low, args.high)))
    print(f"wrote {len(paths)} boundary maps to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import Manifest, load_manifest_samples
    from .trainer import train

    run = _load_run(args.config, args.set)
    man = Manifest.load(args.manifest)
    if not len(man):
        raise ConfigError("manifest is empty")
    samples = load_manifest_samples(man, run.model.input_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.save(out / "run.cfg")
    res = train(samples, run, args.epochs, out_dir=out)
    last = res.log[-1]
    print(f"trained {res.epochs_done} epochs, final loss {last.total:.6f}; checkpoint {out / 'final.ckpt'}")
    return EXIT_OK


def _collect_images(spec: str) -> list[tuple[str, np.ndarray]]:
    from .data import Manifest, read_pnm

    path = Path(spec)
    if path.is_file():
        items = [(sid, ip) for sid, ip, _ in Manifest.load(path).entries]
    else:
        found = {p.stem: p for p in sorted(path.glob("*.ppm")) + sorted(path.glob("*.pgm"))}
        items = sorted(found.items())
    out = []
    for sid, p in items:
        img = read_pnm(p)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        out.append((sid, img.transpose(2, 0, 1)))
    return out


def cmd_infer(args) -> int:
    from .trainer import Checkpoint, infer

    ckpt = Checkpoint.load(args.checkpoint)
    expect = _load_run(args.config, []).model if args.config else None
    images = _collect_images(args.images)
    infer(ckpt, images, args.out, expect, args.dump_boundary)
    print(f"wrote {len(images)} saliency maps to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_dirs

    rep = evaluate_dirs(args.pred_dir, args.gt_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.write_csv(out / "report.csv")
    rep.write_pr_csv(out / "pr_curve.csv")
    print(f"images {len(rep.images)}  F_beta {rep.mean_f:.4f}  MAE {rep.mean_mae:.4f}  maxF {rep.max_f:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck

    names = args.op
    if names:
        unknown = set(names) - set(gradcheck.OP_CHECKS) - {"model"}
        if unknown:
            raise UsageError(f"unknown op(s): {', '.join(sorted(unknown))}")
    results = gradcheck.run_suite(names, range(args.seeds))
    worst: dict[str, float] = {}
    failed = 0
    for r in results:
        key = f"{r.name}/{r.target}"
        worst[key] = max(worst.get(key, 0.0), r.result.max_rel_error)
        failed += not r.passed
    for key, err in worst.items():
        print(f"{'PASS' if err < gradcheck.TOL else 'FAIL'}  {key:40s} max rel err {err:.2e}")
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CONTRACT


def cmd_ablate(args) -> int:
    from .data import Manifest, load_manifest_samples
    from .experiments import ABLATION_ORDER, run_ablation

    run = _load_run(args.config, args.set)
    if args.epochs is not None:
        run = run.with_overrides({"epochs": str(args.epochs)})
    train_s = load_manifest_samples(Manifest.load(args.manifest), run.model.input_size)
    test_s = (load_manifest_samples(Manifest.load(args.test_manifest), run.model.input_size)
              if args.test_manifest else train_s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = run_ablation(train_s, test_s, run, args.seeds, work_dir=out)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["setting", "f_beta", "mae"])
        for name in ABLATION_ORDER:
            w.writerow([name, f"{table[name][0]:.6f}", f"{table[name][1]:.6f}"])
    for name in ABLATION_ORDER:
        print(f"{name:14s} F_beta {table[name][0]:.4f}  MAE {table[name][1]:.4f}")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "gen-boundary": cmd_gen_boundary,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
