"""Command-line entry point: ``vibnet train | prune | eval | analyze``.

Exit codes: 0 success, 1 other failure, 2 bad configuration, 3 missing
file, 4 degenerate pruning. Failures print one line to stderr of the form
``vibnet: error code=<n> kind=<kind> detail=<message>``.
"""

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import checkpoint
from .analysis import (MiTracker, SurrogateProblem, rho, rho_offset, surrogate_minimize)
from .config import ConfigError, RunConfig, load_config
from .data import load_mnist, synthetic_blobs
from .errors import DegenerateArchitectureError, VibnetError
from .metrics import compute_flops, compute_r_n, compute_r_w
from .network import ARCHITECTURES, toy_mlp
from .prune import prune
from .tensor import RandomSource
from .train import TrainConfig, fine_tune, train

log = logging.getLogger("vibnet")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_MISSING, EXIT_DEGENERATE = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, code, kind, detail):
        super().__init__(detail)
        self.code, self.kind, self.detail = code, kind, detail


# ------------------------------------------------------------ helpers

def build_network(cfg):
    seed = cfg.train.seed
    if cfg.architecture == "toy_mlp":
        net = toy_mlp(cfg.widths, seed, input_gate=cfg.input_gate, batch_norm=cfg.batch_norm)
    elif cfg.architecture == "lenet_300_100":
        net = ARCHITECTURES["lenet_300_100"](seed, input_gate=cfg.input_gate)
    elif cfg.architecture == "lenet_5":
        net = ARCHITECTURES["lenet_5"](seed)
    else:
        raise CliError(EXIT_CONFIG, "config", f"model.architecture: unknown {cfg.architecture!r}")
    net.depth_includes_input = cfg.depth_includes_input
    return net


def resolve_data_dir(flag, cfg=None):
    path = flag or (cfg.data_dir if cfg else None) or os.environ.get("DATA_DIR")
    if path and not Path(path).is_dir():
        raise CliError(EXIT_MISSING, "missing_file", f"data directory {path} not found")
    return path


def load_datasets(cfg, data_dir, image_shape=None):
    if cfg.dataset == "blobs":
        tr = synthetic_blobs(cfg.blobs_n, cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation,
                             cfg.train.seed, "train")
        te = synthetic_blobs(cfg.blobs_n, cfg.blobs_classes, cfg.blobs_dim, cfg.blobs_separation,
                             cfg.train.seed + 1, "test")
    else:
        if not data_dir:
            raise CliError(EXIT_MISSING, "missing_file", "no dataset directory (--data-dir or DATA_DIR)")
        flatten = image_shape is None or len(image_shape) == 1
        tr = load_mnist("train", data_dir, flatten)
        te = load_mnist("test", data_dir, flatten)
    if cfg.train_subset:
        tr = tr.subset(np.arange(min(cfg.train_subset, len(tr))))
    if cfg.test_subset:
        te = te.subset(np.arange(min(cfg.test_subset, len(te))))
    return tr, te


def _test_split(net, split, data_dir):
    return load_mnist(split, data_dir, flatten=len(net.input_shape) == 1)


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _out_dir(flag, cfg=None):
    out = Path(flag or (cfg.out_dir if cfg else "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------- commands

def cmd_train(args):
    cfg = load_config(args.config)
    data_dir = resolve_data_dir(args.data_dir, cfg)
    out = _out_dir(args.out, cfg)
    net = build_network(cfg)
    tr, te = load_datasets(cfg, data_dir, net.input_shape)
    log.info("seed %d", cfg.train.seed)
    callbacks = []
    if cfg.mi_track:
        n = min(cfg.mi_samples, len(tr))
        callbacks.append(MiTracker(tr.images[:n], cfg.mi_layer, cfg.mi_k, cfg.train.seed))
    if cfg.checkpoint_every:
        def save_every(net, epoch):
            if epoch % cfg.checkpoint_every == 0:
                checkpoint.save(net, out / f"checkpoint_epoch{epoch:04d}.vibn", cfg.train.seed, epoch)
        callbacks.append(save_every)
    net, tlog = train(net, tr, cfg.train, te, callbacks=callbacks)
    checkpoint.save(net, out / "checkpoint.vibn", cfg.train.seed, cfg.train.epochs)
    tlog.to_csv(out / "train_log.csv")
    print(f"wrote {out / 'checkpoint.vibn'} and {out / 'train_log.csv'}")
    return EXIT_OK


def cmd_prune(args):
    net, seed, epoch = checkpoint.load(args.checkpoint)
    data_dir = resolve_data_dir(args.data_dir)
    out = _out_dir(args.out)
    eval_data = _test_split(net, "test", data_dir) if data_dir else None
    try:
        pruned, report = prune(net, args.tau, fold=args.fold, eval_data=eval_data)
    except DegenerateArchitectureError as exc:
        raise CliError(EXIT_DEGENERATE, "degenerate_architecture", f"layer={exc.layer}") from exc
    if args.fine_tune_epochs and data_dir:
        tr = _test_split(net, "train", data_dir)
        ft = TrainConfig(epochs=args.fine_tune_epochs, lr=args.fine_tune_lr, seed=seed,
                         eval_every=0)
        fine_tune(pruned, tr, ft)
        report.err_after = pruned.error_rate(eval_data.images, eval_data.labels)
    checkpoint.save(pruned, out / "pruned.vibn", seed, epoch)
    (out / "prune_report.txt").write_text(str(report) + "\n", encoding="utf-8")
    (out / "prune_report.csv").write_text(report.to_csv(), encoding="utf-8")
    print(report)
    return EXIT_OK


def cmd_eval(args):
    net, _, _ = checkpoint.load(args.checkpoint)
    data_dir = resolve_data_dir(args.data_dir)
    if data_dir:
        ds = _test_split(net, args.split, data_dir)
        print(f"split={args.split} error={100 * net.error_rate(ds.images, ds.labels):.2f}%")
    arch = net.arch()
    original = net.original_arch or arch
    print(f"arch={arch} r_w={compute_r_w(original, arch):.2f}% "
          f"flops={compute_flops(arch)} r_n={compute_r_n(original, arch):.2f}%")
    return EXIT_OK


def _penalty_rows(cfg):
    rows = []
    mus = np.linspace(cfg.penalty_mu_min, cfg.penalty_mu_max, cfg.penalty_points)
    for w in cfg.penalty_omegas:
        for m in mus:
            f = lambda ls, m=m, w=w: np.log1p(m * m / np.exp(ls)) + np.exp(ls) / w
            res = minimize_scalar(f, bounds=(-60.0, 20.0), method="bounded",
                                  options={"xatol": 1e-12})
            oracle = float(min(res.fun, f(-60.0)) + rho_offset(w))
            value = float(rho(m, w))
            rows.append((repr(float(m)), repr(w), repr(value), repr(oracle), repr(value - oracle)))
    return rows


def cmd_analyze(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    out = _out_dir(args.out)
    if not (args.penalty_grid or args.surrogate or args.mi_demo):
        raise CliError(EXIT_CONFIG, "usage", "choose --penalty-grid, --surrogate or --mi-demo")
    if args.penalty_grid:
        rows = _penalty_rows(cfg)
        _write_rows(out / "penalty_grid.csv", ["mu", "omega", "rho", "oracle", "diff"], rows)
        print(f"penalty grid: {len(rows)} rows, max |diff| = "
              f"{max(abs(float(r[4])) for r in rows):.2e}")
    if args.surrogate:
        rng = RandomSource(cfg.train.seed)
        rows = []
        for p in range(cfg.surrogate_problems):
            prob = SurrogateProblem.random(cfg.surrogate_dim, cfg.surrogate_rank, rng,
                                           cfg.surrogate_gamma)
            for r, res in enumerate(surrogate_minimize(prob, cfg.surrogate_restarts, seed=p)):
                rows.append((p, r, res.nnz, repr(res.objective), int(res.converged)))
        _write_rows(out / "surrogate.csv", ["problem", "restart", "nnz", "objective", "converged"],
                    rows)
        print(f"surrogate: max nnz {max(r[2] for r in rows)} (bound {cfg.surrogate_rank + 1})")
    if args.mi_demo:
        demo = cfg if args.config else RunConfig(architecture="toy_mlp", widths=[8, 32, 16, 4],
                                                 input_gate=False, dataset="blobs")
        if not args.config:
            demo.train = TrainConfig(gamma_prime=0.02, epochs=30, batch_size=50, eval_every=0)
        net = build_network(demo)
        tr, _ = load_datasets(demo, resolve_data_dir(args.data_dir, demo), net.input_shape)
        n = min(demo.mi_samples, len(tr))
        tracker = MiTracker(tr.images[:n], demo.mi_layer, demo.mi_k, demo.train.seed)
        train(net, tr, demo.train, callbacks=[tracker])
        # estimates below 0 are estimator noise; report them as 0 and keep the raw value
        _write_rows(out / "mi_per_epoch.csv", ["epoch", "mi", "mi_raw"],
                    [(e, repr(max(v, 0.0)), repr(v)) for e, v in tracker.history])
        print(f"mi demo: {len(tracker.history)} epochs written")
    return EXIT_OK


# ---------------------------------------------------------------- main

def make_parser():
    p = argparse.ArgumentParser(prog="vibnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a gated network from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out")
    t.add_argument("--data-dir")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("prune", help="prune low-alpha units from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--tau", type=float, default=1e-2)
    r.add_argument("--fold", action="store_true", help="absorb mu into the next layer")
    r.add_argument("--fine-tune-epochs", type=int, default=0)
    r.add_argument("--fine-tune-lr", type=float, default=1e-4)
    r.add_argument("--out")
    r.add_argument("--data-dir")
    r.set_defaults(func=cmd_prune)

    e = sub.add_parser("eval", help="report error and compression of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--data-dir")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("analyze", help="numerical checks of the penalty and estimators")
    a.add_argument("--penalty-grid", action="store_true")
    a.add_argument("--surrogate", action="store_true")
    a.add_argument("--mi-demo", action="store_true")
    a.add_argument("--config")
    a.add_argument("--out")
    a.add_argument("--data-dir")
    a.set_defaults(func=cmd_analyze)
    return p


def _fail(code, kind, detail):
    detail = " ".join(str(detail).split())
    print(f"vibnet: error code={code} kind={kind} detail={detail}", file=sys.stderr)
    return code


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.code, exc.kind, exc.detail)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", f"key={exc.key} {exc}")
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing_file", exc.filename or exc)
    except DegenerateArchitectureError as exc:
        return _fail(EXIT_DEGENERATE, "degenerate_architecture", f"layer={exc.layer}")
    except VibnetError as exc:
        return _fail(EXIT_FAIL, type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
