"""Gated feed-forward networks and the training objective.

A :class:`Network` is an optional input gate, then ``L`` blocks (a chain of
deterministic layers followed by a :class:`~vibnet.gate.VibGate`), then an
affine output head. The objective is

    sum_i gamma_i sum_j log(1 + alpha_ij)  -  L * mean log q(y | h_L)

where ``L`` counts the gated hidden blocks only.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, StateError
from .gate import EVAL_MEAN, TRAIN_SAMPLE, VibGate
from .metrics import Arch, ConvShape, DenseShape
from .tensor import Affine, BatchNorm, Conv2d, Flatten, MaxPool2d, RandomSource, ReLU, is_weighted

CATEGORICAL = "categorical_softmax"
GAUSSIAN = "gaussian"


@dataclass
class Block:
    layers: list
    gate: VibGate


@dataclass
class LossBreakdown:
    kl_per_layer: np.ndarray
    data_term: float
    total: float


@dataclass
class ForwardCache:
    version: int
    mode: str
    input_cache: object = None
    block_caches: list = field(default_factory=list)
    head_cache: object = None
    noise: dict = field(default_factory=dict)
    hidden: list = field(default_factory=list)
    output: np.ndarray = None
    targets: np.ndarray = None


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Network:
    """Optional input gate, gated blocks, and an affine head."""

    def __init__(self, blocks, head, input_gate=None, input_shape=None,
                 likelihood=CATEGORICAL, input_index=None, depth_includes_input=False,
                 original_arch=None, name="custom"):
        if not blocks:
            raise DimensionError("a network needs at least one gated block")
        if likelihood not in (CATEGORICAL, GAUSSIAN):
            raise InputError(f"unknown likelihood {likelihood!r}")
        self.blocks = list(blocks)
        self.head = head
        self.input_gate = input_gate
        self.input_shape = tuple(input_shape)
        self.input_index = None if input_index is None else np.asarray(input_index, dtype=np.int64)
        self.likelihood = likelihood
        self.depth_includes_input = depth_includes_input
        self.original_arch = original_arch
        self.name = name
        self._version = 0
        self.feature_shapes()  # validates composition

    # ---------------------------------------------------------- structure

    @property
    def depth(self):
        extra = 1 if (self.depth_includes_input and self.input_gate is not None) else 0
        return len(self.blocks) + extra

    @property
    def num_outputs(self):
        return self.head.W.shape[0]

    def gates(self):
        """``[(name, gate), ...]`` with the input gate first when present."""
        out = []
        if self.input_gate is not None:
            out.append(("input_gate", self.input_gate))
        out.extend((f"blocks.{i}.gate", b.gate) for i, b in enumerate(self.blocks))
        return out

    def _stages(self):
        if self.input_gate is not None:
            yield "input_gate", [], self.input_gate
        for i, b in enumerate(self.blocks):
            yield f"blocks.{i}", b.layers, b.gate

    def internal_input_shape(self):
        if self.input_index is None:
            return self.input_shape
        return (len(self.input_index),) + self.input_shape[1:]

    def feature_shapes(self):
        """Shapes of every gated feature map (input first when gated)."""
        shape = self.internal_input_shape()
        shapes = []
        if self.input_gate is not None:
            self._check_gate(self.input_gate, shape, "input_gate")
            shapes.append(shape)
        for i, b in enumerate(self.blocks):
            for layer in b.layers:
                shape = layer.out_shape(shape)
            self._check_gate(b.gate, shape, f"blocks.{i}.gate")
            shapes.append(shape)
        self.head.out_shape(shape)
        return shapes

    @staticmethod
    def _check_gate(gate, shape, name):
        if gate.width != shape[0] or gate.per_channel != (len(shape) == 3):
            raise DimensionError(f"{name} ({gate.width}, {gate.broadcast}) does not fit features {shape}")

    def arch(self):
        """Summary used by the compression metrics."""
        shape = self.internal_input_shape()
        layers, widths, features = [], [], []
        if self.input_gate is not None:
            widths.append(shape[0])
            features.append(int(np.prod(shape)))
        for b in self.blocks:
            for layer in b.layers:
                out = layer.out_shape(shape)
                if isinstance(layer, Affine):
                    layers.append(DenseShape(layer.W.shape[1], layer.W.shape[0]))
                elif isinstance(layer, Conv2d):
                    layers.append(ConvShape(layer.W.shape[1], layer.W.shape[0], layer.kernel_size,
                                            out[1], out[2]))
                shape = out
            widths.append(shape[0])
            features.append(int(np.prod(shape)))
        layers.append(DenseShape(self.head.W.shape[1], self.head.W.shape[0]))
        return Arch(tuple(layers), tuple(widths), tuple(features), self.input_gate is not None)

    def parameters(self):
        """Ordered ``name -> array`` mapping of every trainable array (views)."""
        params = {}
        for prefix, layers, gate in self._stages():
            for j, layer in enumerate(layers):
                for k, v in layer.params.items():
                    params[f"{prefix}.layers.{j}.{k}"] = v
            gname = "input_gate" if prefix == "input_gate" else f"{prefix}.gate"
            for k, v in gate.params.items():
                params[f"{gname}.{k}"] = v
        for k, v in self.head.params.items():
            params[f"head.{k}"] = v
        return params

    def buffers(self):
        out = {}
        for i, b in enumerate(self.blocks):
            for j, layer in enumerate(b.layers):
                for k, v in layer.state().items():
                    out[f"blocks.{i}.layers.{j}.{k}"] = v
        return out

    def touch(self):
        """Mark parameters as modified; invalidates outstanding caches."""
        self._version += 1

    def set_gammas(self, gammas):
        for (_, g), gamma in zip(self.gates(), gammas):
            g.gamma = float(gamma)

    # ------------------------------------------------------------ forward

    def forward(self, x, mode=EVAL_MEAN, rng=None, noise=None, exact=False, bn_train=None,
                per_batch=False):
        """Propagate ``x``; returns ``(outputs, cache)``.

        ``noise`` maps gate names to frozen ``eps`` arrays; sampled noise is
        recorded in ``cache.noise`` so a pass can be replayed exactly.
        """
        x = np.asarray(x, dtype=np.float64)
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(f"expected input (*, {self.input_shape}), got {x.shape}")
        if mode == TRAIN_SAMPLE and rng is None and noise is None:
            raise InputError("train_sample mode needs a RandomSource or frozen noise")
        bn_train = (mode == TRAIN_SAMPLE) if bn_train is None else bn_train
        noise = noise or {}
        cache = ForwardCache(self._version, mode)
        h = x if self.input_index is None else x[:, self.input_index]
        if self.input_gate is not None:
            h, cache.input_cache = self._gate(self.input_gate, "input_gate", h, mode, rng, noise,
                                              cache, per_batch)
            cache.hidden.append(h)
        for i, b in enumerate(self.blocks):
            layer_caches = []
            for layer in b.layers:
                h, c = layer.forward(h, training=bn_train, exact=exact)
                layer_caches.append(c)
            h, gc = self._gate(b.gate, f"blocks.{i}.gate", h, mode, rng, noise, cache, per_batch)
            cache.block_caches.append((layer_caches, gc))
            cache.hidden.append(h)
        out, cache.head_cache = self.head.forward(h, exact=exact)
        cache.output = out
        return out, cache

    @staticmethod
    def _gate(gate, name, h, mode, rng, noise, cache, per_batch):
        h, gc = gate.forward(h, mode, rng, eps=noise.get(name), per_batch=per_batch)
        if gc[1] is not None:
            cache.noise[name] = gc[1]
        return h, gc

    def predict(self, x, batch_size=1000, exact=False):
        """Eval-mode class predictions (or regression outputs)."""
        outs = []
        for s in range(0, x.shape[0], batch_size):
            out, _ = self.forward(x[s:s + batch_size], EVAL_MEAN, exact=exact)
            outs.append(out)
        out = np.concatenate(outs)
        return out.argmax(axis=1) if self.likelihood == CATEGORICAL else out

    def error_rate(self, x, y, batch_size=1000):
        return float(np.mean(self.predict(x, batch_size) != y))

    # --------------------------------------------------------------- loss

    def _check_targets(self, y, n):
        y = np.asarray(y)
        if y.shape[0] != n or n == 0:
            raise InputError(f"need {n} > 0 targets, got {y.shape}")
        if self.likelihood == CATEGORICAL:
            if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
                raise InputError("categorical targets must be a 1-D integer array")
            if y.min() < 0 or y.max() >= self.num_outputs:
                raise InputError(f"label out of range [0, {self.num_outputs})")
        elif y.shape != (n, self.num_outputs):
            raise InputError(f"gaussian targets must have shape ({n}, {self.num_outputs})")
        return y

    def nll(self, out, y):
        """Per-example negative log-likelihood under the head."""
        if self.likelihood == CATEGORICAL:
            return -log_softmax(out)[np.arange(out.shape[0]), y]
        d = out.shape[1]
        return 0.5 * np.sum((y - out) ** 2, axis=1) + 0.5 * d * np.log(2 * np.pi)

    def _nll_grad(self, out, y):
        if self.likelihood == CATEGORICAL:
            g = np.exp(log_softmax(out))
            g[np.arange(out.shape[0]), y] -= 1.0
            return g
        return out - y

    def kl_terms(self):
        return np.array([g.kl_penalty()[0] for _, g in self.gates()])

    def loss(self, x, y, mode=TRAIN_SAMPLE, rng=None, noise=None, bn_train=None,
             per_batch=False):
        """Objective on one minibatch; returns ``(LossBreakdown, cache)``."""
        y = self._check_targets(y, np.shape(x)[0])
        out, cache = self.forward(x, mode, rng, noise, bn_train=bn_train, per_batch=per_batch)
        cache.targets = y
        data_term = self.depth * float(np.mean(self.nll(out, y)))
        kl = self.kl_terms()
        return LossBreakdown(kl, data_term, float(kl.sum()) + data_term), cache

    def backward(self, cache, include_kl=True):
        """Gradients of the cached loss for every parameter in :meth:`parameters`."""
        if cache is None or cache.targets is None:
            raise StateError("backward needs the cache of a loss() call")
        if cache.version != self._version:
            raise StateError("stale cache: parameters changed since the forward pass")
        out = cache.output
        grads = {}
        dout = self.depth * self._nll_grad(out, cache.targets) / out.shape[0]
        dh, g = self.head.backward(dout, cache.head_cache)
        grads.update({f"head.{k}": v for k, v in g.items()})
        for i in reversed(range(len(self.blocks))):
            b = self.blocks[i]
            layer_caches, gc = cache.block_caches[i]
            dh, g = b.gate.backward(dh, gc)
            grads.update({f"blocks.{i}.gate.{k}": v for k, v in g.items()})
            for j in reversed(range(len(b.layers))):
                dh, g = b.layers[j].backward(dh, layer_caches[j])
                grads.update({f"blocks.{i}.layers.{j}.{k}": v for k, v in g.items()})
        if self.input_gate is not None:
            _, g = self.input_gate.backward(dh, cache.input_cache)
            grads.update({f"input_gate.{k}": v for k, v in g.items()})
        if include_kl:
            for name, gate in self.gates():
                _, kg = gate.kl_penalty()
                for k, v in kg.items():
                    grads[f"{name}.{k}"] = grads[f"{name}.{k}"] + v
        params = self.parameters()
        return {k: grads[k] for k in params}


# ------------------------------------------------------------ builders

def dense_block(n_in, n_out, rng, gamma=0.0, batch_norm=True):
    layers = [Affine.init(n_in, n_out, rng)]
    if batch_norm:
        layers.append(BatchNorm(n_out))
    layers.append(ReLU())
    return Block(layers, VibGate.init(n_out, rng, gamma))


def conv_block(c_in, c_out, k, rng, gamma=0.0, pool=2, batch_norm=True):
    layers = [Conv2d.init(c_in, c_out, k, rng)]
    if batch_norm:
        layers.append(BatchNorm(c_out))
    layers.append(ReLU())
    if pool:
        layers.append(MaxPool2d(pool))
    return Block(layers, VibGate.init(c_out, rng, gamma, per_channel=True))


def toy_mlp(widths, seed=0, gamma=0.0, input_gate=False, batch_norm=True,
            likelihood=CATEGORICAL):
    """Dense chain ``widths = [d_in, h_1, ..., h_L, d_out]`` with a gate per hidden layer."""
    widths = [int(w) for w in widths]
    if len(widths) < 3:
        raise InputError("toy_mlp needs at least one hidden layer")
    rng = RandomSource(seed)
    gate0 = VibGate.init(widths[0], rng, gamma) if input_gate else None
    blocks = [dense_block(a, b, rng, gamma, batch_norm) for a, b in zip(widths[:-2], widths[1:-1])]
    head = Affine.init(widths[-2], widths[-1], rng)
    return Network(blocks, head, gate0, (widths[0],), likelihood, name="toy_mlp")


def lenet_300_100(seed=0, gamma=0.0, input_gate=True):
    """784-300-100-10 dense net with a gate on the input pixels."""
    net = toy_mlp([784, 300, 100, 10], seed, gamma, input_gate=input_gate)
    net.name = "lenet_300_100"
    return net


def lenet_5(seed=0, gamma=0.0):
    """Caffe LeNet-5: conv(20,5) pool conv(50,5) pool fc(500) fc(10), per-channel gates."""
    rng = RandomSource(seed)
    blocks = [
        conv_block(1, 20, 5, rng, gamma),
        conv_block(20, 50, 5, rng, gamma),
    ]
    fc = dense_block(800, 500, rng, gamma)
    fc.layers.insert(0, Flatten())
    blocks.append(fc)
    head = Affine.init(500, 10, rng)
    return Network(blocks, head, None, (1, 28, 28), name="lenet_5")


ARCHITECTURES = {
    "lenet_300_100": lenet_300_100,
    "lenet_5": lenet_5,
    "toy_mlp": toy_mlp,
}


def layer_gammas(net, gamma_prime, rule="uniform"):
    """Per-gate penalty weights: ``gamma'`` or ``gamma' / S`` for conv feature maps."""
    if rule not in ("uniform", "inverse_side_length"):
        raise InputError(f"unknown gamma rule {rule!r}")
    gammas = []
    for shape in net.feature_shapes():
        if rule == "inverse_side_length" and len(shape) == 3:
            gammas.append(gamma_prime / shape[1])
        else:
            gammas.append(gamma_prime)
    return gammas


def weighted_layers(net):
    return [l for _, layers, _ in net._stages() for l in layers if is_weighted(l)] + [net.head]
