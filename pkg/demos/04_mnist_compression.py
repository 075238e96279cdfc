"""LeNet-300-100 on MNIST: train with gates, prune, fine-tune, track I(h1; x).

Needs the MNIST IDX files in $DATA_DIR (see tools/fetch_mnist.py) and takes
about 7 minutes per run on one core. Pass --control to also train the
plain baseline (gamma' = 0, no weight decay). Writes train_log.csv, prune_report.csv and
mi_per_epoch.csv to --out.

Usage: python demos/04_mnist_compression.py [--out DIR] [--epochs N] [--control]
"""

import argparse
import csv
import logging
from pathlib import Path

from vibnet.checkpoint import save
from vibnet.experiments import (LENET300_EPOCHS, alpha_gap_fraction, control_config,
                                lenet300_config, mnist_compression_run)


def write_mi(path, runs):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch"] + list(runs))
        for rows in zip(*runs.values()):
            w.writerow([rows[0][0]] + [repr(v) for _, v in rows])


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--out", default="mnist_run")
    p.add_argument("--epochs", type=int, default=LENET300_EPOCHS)
    p.add_argument("--control", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    run = mnist_compression_run(cfg=lenet300_config(epochs=args.epochs))
    run.log.to_csv(out / "train_log.csv")
    (out / "prune_report.csv").write_text(run.report.to_csv(), encoding="utf-8")
    save(run.tuned, out / "pruned_tuned.vibn", epoch=args.epochs)
    print(run.report)
    print(f"fine-tuned test error {100 * run.err_tuned:.2f}%")
    print(f"units with alpha in [1e-2, 1e-1): {100 * alpha_gap_fraction(run.net):.1f}%")
    mi = {"gated": run.mi}

    if args.control:
        ctrl = mnist_compression_run(cfg=control_config(args.epochs), fine_tune_epochs=0)
        mi["control"] = ctrl.mi
    write_mi(out / "mi_per_epoch.csv", mi)
    for name, series in mi.items():
        print(name, "MI per epoch:", " ".join(f"{v:.2f}" for _, v in series))


if __name__ == "__main__":
    main()
