"""Model surgery: drop gated units whose signal-to-noise ratio is below tau.

A dropped unit ``j`` of gated layer ``i`` takes with it row ``j`` of the
layer's weights and bias, entry ``j`` of any batch-norm parameters and
running statistics, gate coordinate ``j``, and the matching input columns
of the next weighted layer. For an input gate, the surviving pixel indices
are recorded in ``Network.input_index`` so callers keep passing full-size
inputs.

Surviving gates keep their ``mu`` as a fixed multiplier unless
``fold=True``, in which case ``mu`` is absorbed into the next layer's
columns and the gate becomes the identity.
"""

import copy
import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateArchitectureError, InputError
from .gate import LOG_SIGMA2_MIN, VibGate
from .metrics import compute_flops, compute_r_n, compute_r_w
from .tensor import Affine, BatchNorm, Conv2d, Flatten

DEFAULT_TAU = 1e-2

REPORT_FIELDS = ("tau", "r_w", "flops_before", "flops_after", "r_n", "err_before", "err_after",
                 "arch_before", "arch_after")


@dataclass
class PruneReport:
    tau: float
    kept: list
    arch_before: str
    arch_after: str
    r_w: float
    r_n: float
    flops_before: int
    flops_after: int
    err_before: float = None
    err_after: float = None

    def row(self):
        return {k: getattr(self, k) for k in REPORT_FIELDS}

    def to_csv(self, header=True):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
        if header:
            writer.writeheader()
        writer.writerow({k: "" if v is None else v for k, v in self.row().items()})
        return buf.getvalue()

    def __str__(self):
        lines = [
            f"tau          {self.tau:g}",
            f"architecture {self.arch_before} -> {self.arch_after}",
            f"r_W          {self.r_w:.2f}%",
            f"r_N          {self.r_n:.2f}%",
            f"FLOPs        {self.flops_before} -> {self.flops_after}",
        ]
        if self.err_before is not None:
            lines.append(f"test error   {100 * self.err_before:.2f}% -> {100 * self.err_after:.2f}%")
        return "\n".join(lines)


def keep_masks(net, tau=DEFAULT_TAU):
    """Boolean survival mask per gate (``alpha >= tau``), keyed by gate name."""
    if not tau >= 0:
        raise InputError(f"tau must be nonnegative, got {tau}")
    return {name: gate.alpha() >= tau for name, gate in net.gates()}


def _first_consumer(layers):
    """Index of the first weighted layer and whether a Flatten precedes it."""
    flat = False
    for j, layer in enumerate(layers):
        if isinstance(layer, Flatten):
            flat = True
        if isinstance(layer, (Affine, Conv2d)):
            return j, flat
    raise InputError("block has no weighted layer")


def _column_index(keep, in_shape, flat):
    """Input positions of the consumer that survive, given kept units."""
    idx = np.flatnonzero(keep)
    if not flat or len(in_shape) == 1:
        return idx
    per = int(np.prod(in_shape[1:]))
    return (idx[:, None] * per + np.arange(per)[None, :]).reshape(-1)


def _drop_inputs(layer, cols):
    W = layer.W[:, cols]
    if isinstance(layer, Affine):
        return Affine(W.copy(), layer.b.copy())
    return Conv2d(W.copy(), layer.b.copy(), layer.stride, layer.padding)


def _drop_outputs(layers, keep):
    idx = np.flatnonzero(keep)
    out = []
    for layer in layers:
        if isinstance(layer, Affine):
            layer = Affine(layer.W[idx].copy(), layer.b[idx].copy())
        elif isinstance(layer, Conv2d):
            layer = Conv2d(layer.W[idx].copy(), layer.b[idx].copy(), layer.stride, layer.padding)
        elif isinstance(layer, BatchNorm):
            bn = BatchNorm(len(idx), layer.momentum, layer.eps)
            bn.params = {k: v[idx].copy() for k, v in layer.params.items()}
            bn.running_mean = layer.running_mean[idx].copy()
            bn.running_var = layer.running_var[idx].copy()
            layer = bn
        out.append(layer)
    return out


def _fold(gate, consumer, in_shape, flat):
    """Scale the consumer's input columns by ``mu``; return an identity gate."""
    scale = gate.mu
    if flat and len(in_shape) > 1:
        scale = np.repeat(scale, int(np.prod(in_shape[1:])))
    W = consumer.W.copy()
    if isinstance(consumer, Affine):
        W *= scale[None, :]
        new = Affine(W, consumer.b.copy())
    else:
        W *= scale[None, :, None, None]
        new = Conv2d(W, consumer.b.copy(), consumer.stride, consumer.padding)
    return VibGate.identity(gate.width, gate.per_channel), new


def surgery(net, masks, fold=False):
    """Return a new network with every ``False`` unit in ``masks`` removed."""
    net = copy.deepcopy(net)
    shapes = net.feature_shapes()
    names = [name for name, _ in net.gates()]
    for name in names:
        if not np.any(masks[name]):
            raise DegenerateArchitectureError(name)
    original_arch = net.original_arch or net.arch()

    # consumers: (container, index) of the weighted layer fed by each gate
    def consumer_slot(k):
        bi = k if net.input_gate is None else k - 1  # block index of this gate
        if bi + 1 < len(net.blocks):
            layers = net.blocks[bi + 1].layers
            j, flat = _first_consumer(layers)
            return layers, j, flat
        return None, None, False

    for k, name in enumerate(names):
        keep = np.asarray(masks[name], dtype=bool)
        gate = dict(net.gates())[name]
        in_shape = shapes[k]
        layers, j, flat = consumer_slot(k)
        if name == "input_gate":
            base = np.arange(in_shape[0]) if net.input_index is None else net.input_index
            net.input_index = base[keep]
            layers, j, flat = net.blocks[0].layers, *_first_consumer(net.blocks[0].layers)
        else:
            bi = int(name.split(".")[1])
            net.blocks[bi].layers = _drop_outputs(net.blocks[bi].layers, keep)
        new_gate = gate.subset(keep)
        kept_shape = (int(keep.sum()),) + tuple(in_shape[1:])
        cols = _column_index(keep, in_shape, flat)
        if layers is None:
            consumer = _drop_inputs(net.head, cols)
        else:
            consumer = _drop_inputs(layers[j], cols)
        if fold:
            new_gate, consumer = _fold(new_gate, consumer, kept_shape, flat)
        if layers is None:
            net.head = consumer
        else:
            layers[j] = consumer
        if name == "input_gate":
            net.input_gate = new_gate
        else:
            net.blocks[int(name.split(".")[1])].gate = new_gate
    net.original_arch = original_arch
    net.touch()
    net.feature_shapes()
    return net


def prune(net, tau=DEFAULT_TAU, fold=False, eval_data=None):
    """Prune units with ``alpha < tau``; returns ``(pruned_net, PruneReport)``.

    ``eval_data`` (a Dataset) adds before/after test error to the report.
    """
    masks = keep_masks(net, tau)
    pruned = surgery(net, masks, fold=fold)
    report = _report(net, pruned, tau, masks)
    if eval_data is not None:
        report.err_before = net.error_rate(eval_data.images, eval_data.labels)
        report.err_after = pruned.error_rate(eval_data.images, eval_data.labels)
    return pruned, report


def _report(net, pruned, tau, masks):
    original = net.original_arch or net.arch()
    after = pruned.arch()
    return PruneReport(
        tau=tau,
        kept=[int(np.sum(m)) for m in masks.values()],
        arch_before=str(original),
        arch_after=str(after),
        r_w=compute_r_w(original, after),
        r_n=compute_r_n(original, after),
        flops_before=compute_flops(original),
        flops_after=compute_flops(after),
    )


def zero_mu_masks(net):
    """Masks that drop exactly the coordinates with ``mu == 0``."""
    return {name: gate.mu != 0 for name, gate in net.gates()}


def silence(net, masks):
    """Set ``mu = 0`` and minimal noise on dropped coordinates, in place."""
    for name, gate in net.gates():
        off = ~np.asarray(masks[name], dtype=bool)
        gate.mu[off] = 0.0
        gate.log_sigma2[off] = LOG_SIGMA2_MIN
    net.touch()
    return net
