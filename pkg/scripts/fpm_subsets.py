"""Score merged predictions from subsets of the five stage-wise maps (Table-3 layout).

    python3 scripts/fpm_subsets.py --checkpoint runs/desk/final.ckpt --out runs/fpm

Without --checkpoint a fresh AffmPlus model is trained with the desk config.
For each subset a 1x1 merge is refitted on the training stage logits; the
stage heads themselves stay frozen.
"""
import argparse
import csv
from pathlib import Path

from bfan import experiments, trainer
from bfan.data import gen_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--checkpoint", help="trained checkpoint with all five FPMs")
    args = ap.parse_args()

    if args.checkpoint:
        ck = trainer.Checkpoint.load(args.checkpoint)
        run, params = ck.run, ck.params
    else:
        run = experiments.desk_config(ablation="AffmPlus")
        params = None
    size = run.model.input_size[0]
    train_s = gen_synthetic(200, size, seed=0, prefix="train_")
    test_s = gen_synthetic(50, size, seed=1000, prefix="test_")
    if params is None:
        params = trainer.train(train_s, run).params

    rows = experiments.fpm_subset_study(params, run, train_s, test_s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "fpm_subsets.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "f_beta", "mae"])
        for subset, f, m in rows:
            w.writerow(["".join(map(str, subset)), f"{f:.6f}", f"{m:.6f}"])
    for subset, f, m in rows:
        print(f"{''.join(map(str, subset)):>6s}  F_beta {f:.4f}  MAE {m:.4f}")
    fs = [f for _, f, _ in rows]
    print("non-decreasing (one inversion allowed):", experiments.monotone_with_inversions(fs, 1))


if __name__ == "__main__":
    main()
