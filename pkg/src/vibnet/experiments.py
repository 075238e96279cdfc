"""End-to-end recipes shared by the demos and the acceptance suite."""

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import MiTracker
from .data import load_mnist
from .network import lenet_300_100
from .prune import prune
from .train import TrainConfig, fine_tune, train

# calibrated on MNIST for LeNet-300-100 (see README)
LENET300_GAMMA = 1e-3
LENET300_EPOCHS = 30
LENET300_WEIGHT_DECAY = 2e-3


@dataclass
class CompressionRun:
    net: object
    log: object
    pruned: object
    report: object
    tuned: object = None
    err_tuned: float = None
    mi: list = field(default_factory=list)
    seconds: float = 0.0


def lenet300_config(gamma_prime=LENET300_GAMMA, epochs=LENET300_EPOCHS, seed=0, **kw):
    opts = dict(gamma_prime=gamma_prime, epochs=epochs, seed=seed, lr=1e-3, batch_size=100,
                lr_decay=0.5, lr_decay_every=10, weight_decay=LENET300_WEIGHT_DECAY)
    opts.update(kw)
    return TrainConfig(**opts)


def control_config(epochs=LENET300_EPOCHS, seed=0, **kw):
    """Plain training for comparison: no gate penalty and no weight decay."""
    opts = dict(weight_decay=0.0)
    opts.update(kw)
    return lenet300_config(0.0, epochs, seed, **opts)


def mnist_compression_run(data_dir=None, cfg=None, mi_samples=1000, mi_k=5, tau=1e-2,
                          fine_tune_epochs=3, fine_tune_lr=1e-4, train_data=None, test_data=None):
    """Train LeNet-300-100 with gates, prune at ``tau`` and fine-tune.

    ``mi_samples = 0`` disables mutual-information tracking.
    """
    cfg = cfg or lenet300_config()
    t0 = time.time()
    tr = train_data if train_data is not None else load_mnist("train", data_dir)
    te = test_data if test_data is not None else load_mnist("test", data_dir)
    net = lenet_300_100(cfg.seed)
    callbacks = []
    tracker = None
    if mi_samples:
        tracker = MiTracker(tr.images[:mi_samples], layer=1, k=mi_k, seed=cfg.seed)
        callbacks.append(tracker)
    net, log = train(net, tr, cfg, te, callbacks=callbacks)
    pruned, report = prune(net, tau, eval_data=te)
    run = CompressionRun(net, log, pruned, report, mi=list(tracker.history) if tracker else [])
    if fine_tune_epochs:
        tuned = copy.deepcopy(pruned)
        ft = TrainConfig(epochs=fine_tune_epochs, lr=fine_tune_lr, seed=cfg.seed + 1,
                         batch_size=cfg.batch_size, eval_every=0)
        fine_tune(tuned, tr, ft)
        run.tuned = tuned
        run.err_tuned = tuned.error_rate(te.images, te.labels)
    run.seconds = time.time() - t0
    return run


def alpha_gap_fraction(net, tau=1e-2):
    """Fraction of gated units with ``tau <= alpha < 10 tau``."""
    a = np.concatenate([g.alpha() for _, g in net.gates()])
    return float(np.mean((a >= tau) & (a < 10 * tau)))
