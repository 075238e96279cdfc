"""Minibatch optimization of the gated-network objective."""

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DivergenceError, InputError
from .gate import EVAL_MEAN, TRAIN_SAMPLE
from .network import layer_gammas
from .tensor import RandomSource

log = logging.getLogger(__name__)

DEFAULT_TAU = 1e-2
DIVERGENCE_LIMIT = 1e8


@dataclass
class TrainConfig:
    gamma_prime: float = 0.0
    gamma_rule: str = "uniform"
    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 10
    batch_size: int = 100
    seed: int = 0
    eval_every: int = 1
    epsilon_draw: str = "per_example"
    lr_decay: float = 1.0
    lr_decay_every: int = 0
    prune_tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.lr <= 0:
            raise InputError(f"learning rate must be positive, got {self.lr}")
        if self.epochs < 0:
            raise InputError(f"epochs must be nonnegative, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.gamma_prime < 0 or self.weight_decay < 0:
            raise InputError("gamma_prime and weight_decay must be nonnegative")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")
        if self.epsilon_draw not in ("per_example", "per_batch"):
            raise InputError(f"unknown epsilon_draw {self.epsilon_draw!r}")
        if self.gamma_rule not in ("uniform", "inverse_side_length"):
            raise InputError(f"unknown gamma_rule {self.gamma_rule!r}")


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise InputError("TrainLog rows must be strictly increasing in epoch")
        self.rows.append(row)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    def to_csv(self, path):
        if not self.rows:
            raise InputError("empty TrainLog")
        header = _csv_header(self.rows)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in self.rows:
                writer.writerow([_fmt(_flat(row).get(k)) for k in header])


def _flat(row):
    out = {}
    for k, v in row.items():
        if isinstance(v, (list, tuple, np.ndarray)):
            for i, x in enumerate(v):
                out[f"{k}_{i}"] = x
        else:
            out[k] = v
    return out


def _csv_header(rows):
    header = []
    for row in rows:
        for k in _flat(row):
            if k not in header:
                header.append(k)
    return header


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def is_decayed(name):
    """Weight decay applies to affine/conv weight matrices only."""
    return name.endswith(".W")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGDMomentum:
    def __init__(self, lr=1e-2, momentum=0.9):
        self.lr, self.momentum = lr, momentum
        self.buf = {}

    def step(self, params, grads):
        for name, g in grads.items():
            b = self.buf.setdefault(name, np.zeros_like(g))
            b *= self.momentum
            b += g
            params[name] -= self.lr * b


def make_optimizer(cfg):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return SGDMomentum(cfg.lr, cfg.momentum)


def surviving_counts(net, tau):
    return [int(np.sum(g.alpha() >= tau)) for _, g in net.gates()]


def _offending_layer(net, grads=None):
    for name, p in net.parameters().items():
        if not np.all(np.isfinite(p)):
            return name.rsplit(".", 1)[0]
    for name, g in (grads or {}).items():
        if not np.all(np.isfinite(g)):
            return name.rsplit(".", 1)[0]
    for name, gate in net.gates():
        if not np.isfinite(gate.kl_penalty()[0]):
            return name
    return "head"


def train(net, data, cfg, test_data=None, callbacks=(), step_hooks=(), trainable=None,
          mode=TRAIN_SAMPLE, include_kl=True, assign_gammas=True):
    """Optimize ``net`` in place on ``data``; returns ``(net, TrainLog)``.

    ``callbacks`` are called as ``cb(net, epoch)`` after every epoch and may
    return a dict merged into that epoch's log row. ``step_hooks`` run as
    ``hook(net)`` after every optimizer step (e.g. to hold weights fixed).
    ``trainable`` filters parameter names; gates are frozen by passing a
    predicate that excludes them.
    """
    if len(data) == 0:
        raise InputError("empty training set")
    if assign_gammas:
        net.set_gammas(layer_gammas(net, cfg.gamma_prime, cfg.gamma_rule))
    rng = RandomSource(cfg.seed)
    shuffle_rng, noise_rng = rng.split(2)
    opt = make_optimizer(cfg)
    params = net.parameters()
    names = [k for k in params if trainable is None or trainable(k)]
    per_batch = cfg.epsilon_draw == "per_batch"
    log_ = TrainLog()
    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_decay_every and epoch > 1 and (epoch - 1) % cfg.lr_decay_every == 0:
            opt.lr *= cfg.lr_decay
        sums = None
        n_seen = 0
        for x, y in data.batches(cfg.batch_size, shuffle_rng):
            lb, cache = net.loss(x, y, mode, noise_rng, per_batch=per_batch)
            if not np.isfinite(lb.total) or abs(lb.total) > DIVERGENCE_LIMIT:
                layer = _offending_layer(net)
                raise DivergenceError(
                    f"loss diverged ({lb.total}) at epoch {epoch}; offending layer {layer}", layer)
            grads = net.backward(cache, include_kl=include_kl)
            grads = {k: grads[k] for k in names}
            if cfg.weight_decay:
                for k in names:
                    if is_decayed(k):
                        grads[k] = grads[k] + cfg.weight_decay * params[k]
            opt.step(params, grads)
            for _, gate in net.gates():
                gate.project()
            for hook in step_hooks:
                hook(net)
            net.touch()
            b = x.shape[0]
            vec = np.concatenate([[lb.total, lb.data_term], lb.kl_per_layer])
            sums = vec * b if sums is None else sums + vec * b
            n_seen += b
        means = sums / n_seen
        row = {
            "epoch": epoch,
            "total": float(means[0]),
            "data_term": float(means[1]),
            "kl": [float(v) for v in means[2:]],
        }
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            row["train_error"] = net.error_rate(data.images, data.labels)
            if test_data is not None:
                row["test_error"] = net.error_rate(test_data.images, test_data.labels)
        row["survivors"] = surviving_counts(net, cfg.prune_tau)
        for cb in callbacks:
            extra = cb(net, epoch)
            if extra:
                row.update(extra)
        log_.append(row)
        log.info("epoch %d total %.4f data %.4f test_err %s survivors %s", epoch, row["total"],
                 row["data_term"], row.get("test_error"), row["survivors"])
    return net, log_


def fine_tune(net, data, cfg, test_data=None):
    """Retrain the surviving weights with the KL term off and gates frozen.

    Gates act as fixed ``mu`` multipliers (eval mode); batch norm keeps using
    batch statistics. The architecture is never changed.
    """
    if cfg.epochs == 0:
        return net
    train(net, data, cfg, test_data, trainable=lambda k: ".gate." not in k
          and not k.startswith("input_gate."), mode=EVAL_MEAN, include_kl=False,
          assign_gammas=False)
    return net


def config_dict(cfg):
    return asdict(cfg)
