"""Dense numeric substrate: random source and deterministic layer primitives.

Arrays are plain ``float64`` numpy arrays. Every layer exposes
``forward(x, training, exact) -> (y, cache)`` and
``backward(dy, cache) -> (dx, grads)``; caches are returned to the caller
rather than stored on the layer, so one layer object can serve several
in-flight passes.

``exact=True`` selects order-fixed reductions for the weighted layers: each
output element is accumulated sequentially over its inputs with elementwise
numpy operations. The result then does not depend on array layout or BLAS
blocking, and dropping an input whose value is exactly zero leaves every
output bit unchanged. It is slow and only meant for evaluation.
"""

import math

import numpy as np

from .errors import DimensionError, StateError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class RandomSource:
    """Seeded, reproducible random stream over a counter-based generator.

    Uniforms come from numpy's Philox bit generator; Gaussians are produced
    from those uniforms with the Box-Muller transform. Use :meth:`split` to
    hand independent child streams to parallel workers.
    """

    def __init__(self, seed=0, _seq=None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def uniform(self, shape=()):
        return self._gen.random(shape)

    def standard_normal(self, shape=()):
        size = int(np.prod(shape, dtype=np.int64))
        half = (size + 1) // 2
        u1 = 1.0 - self._gen.random(half)  # (0, 1], keeps log finite
        u2 = self._gen.random(half)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:size]
        return z.reshape(shape)

    def normal(self, loc=0.0, scale=1.0, shape=()):
        return loc + scale * self.standard_normal(shape)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def split(self, n):
        """Return ``n`` child sources with disjoint streams."""
        return [RandomSource(self.seed, _seq=s) for s in self._seq.spawn(n)]


def _require_cache(cache):
    if cache is None:
        raise StateError("backward called before forward (no cache)")


# ---------------------------------------------------------------- kernels

def affine_forward(x, W, b, exact=False):
    """``out[n, o] = sum_i W[o, i] x[n, i] + b[o]``."""
    if x.ndim != 2 or x.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise DimensionError(
            f"affine: input {x.shape} incompatible with weight {W.shape} / bias {b.shape}")
    if not exact:
        return x @ W.T + b
    out = np.zeros((x.shape[0], W.shape[0]))
    for i in range(W.shape[1]):
        out += x[:, i:i + 1] * W[:, i]
    return out + b


def affine_backward(dy, x, W):
    return dy @ W, dy.T @ x, dy.sum(axis=0)


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


def _pad(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _windows(xp, k, stride, ho, wo):
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride][:, :, :ho, :wo]


def _conv_geometry(x, W, b, stride, padding):
    if x.ndim != 4 or W.ndim != 4 or x.shape[1] != W.shape[1] or W.shape[2] != W.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {W.shape}")
    if b.shape != (W.shape[0],):
        raise DimensionError(f"conv2d: bias {b.shape} does not match {W.shape[0]} filters")
    k = W.shape[2]
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1 or stride < 1:
        raise DimensionError(
            f"conv2d: kernel {k} stride {stride} padding {padding} does not fit input {x.shape}")
    return k, ho, wo


def conv2d_forward(x, W, b, stride=1, padding=0, exact=False):
    """Cross-correlation of ``x`` (N, C, H, W) with filters ``W`` (O, C, k, k)."""
    k, ho, wo = _conv_geometry(x, W, b, stride, padding)
    xp = _pad(x, padding)
    if not exact:
        win = _windows(xp, k, stride, ho, wo)
        out = np.tensordot(win, W, axes=([1, 4, 5], [1, 2, 3]))
        return out.transpose(0, 3, 1, 2) + b[None, :, None, None]
    out = np.zeros((x.shape[0], W.shape[0], ho, wo))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for c in range(W.shape[1]):
        for i in range(k):
            for j in range(k):
                patch = xp[:, c, i:i + span_h:stride, j:j + span_w:stride]
                out += W[None, :, c, i, j, None, None] * patch[:, None]
    return out + b[None, :, None, None]


def conv2d_backward(dy, x, W, stride=1, padding=0):
    k = W.shape[2]
    ho, wo = dy.shape[2], dy.shape[3]
    xp = _pad(x, padding)
    win = _windows(xp, k, stride, ho, wo)
    dW = np.tensordot(dy, win, axes=([0, 2, 3], [0, 2, 3]))
    db = dy.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(dy, W[:, :, i, j], axes=([1], [0]))  # N, ho, wo, C
            dxp[:, :, i:i + span_h:stride, j:j + span_w:stride] += contrib.transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dW, db


# ----------------------------------------------------------------- layers

class Layer:
    """Base class; subclasses set ``kind`` and fill ``params``."""

    kind = "layer"

    def __init__(self):
        self.params = {}

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, x, training=False, exact=False):
        raise NotImplementedError

    def backward(self, dy, cache):
        raise NotImplementedError

    def state(self):
        """Non-trainable arrays that must be persisted (e.g. running stats)."""
        return {}


class Affine(Layer):
    kind = "affine"

    def __init__(self, W, b=None):
        super().__init__()
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 2:
            raise DimensionError(f"affine weight must be (out, in), got {W.shape}")
        b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
        self.params = {"W": W, "b": b}

    @classmethod
    def init(cls, n_in, n_out, rng):
        return cls(rng.standard_normal((n_out, n_in)) * math.sqrt(2.0 / n_in))

    @property
    def W(self):
        return self.params["W"]

    @property
    def b(self):
        return self.params["b"]

    def out_shape(self, in_shape):
        if tuple(in_shape) != (self.W.shape[1],):
            raise DimensionError(f"affine expects ({self.W.shape[1]},), got {tuple(in_shape)}")
        return (self.W.shape[0],)

    def forward(self, x, training=False, exact=False):
        return affine_forward(x, self.W, self.b, exact=exact), x

    def backward(self, dy, cache):
        _require_cache(cache)
        dx, dW, db = affine_backward(dy, cache, self.W)
        return dx, {"W": dW, "b": db}


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, W, b=None, stride=1, padding=0):
        super().__init__()
        W = np.asarray(W, dtype=np.float64)
        if W.ndim != 4 or W.shape[2] != W.shape[3]:
            raise DimensionError(f"conv weight must be (out, in, k, k), got {W.shape}")
        b = np.zeros(W.shape[0]) if b is None else np.asarray(b, dtype=np.float64)
        self.params = {"W": W, "b": b}
        self.stride = int(stride)
        self.padding = int(padding)

    @classmethod
    def init(cls, c_in, c_out, k, rng, stride=1, padding=0):
        W = rng.standard_normal((c_out, c_in, k, k)) * math.sqrt(2.0 / (c_in * k * k))
        return cls(W, stride=stride, padding=padding)

    @property
    def W(self):
        return self.params["W"]

    @property
    def b(self):
        return self.params["b"]

    @property
    def kernel_size(self):
        return self.W.shape[2]

    def out_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.W.shape[1]:
            raise DimensionError(f"conv2d expects {self.W.shape[1]} channels, got {c}")
        k = self.kernel_size
        ho = conv_output_size(h, k, self.stride, self.padding)
        wo = conv_output_size(w, k, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise DimensionError(f"conv2d kernel {k} does not fit {in_shape}")
        return (self.W.shape[0], ho, wo)

    def forward(self, x, training=False, exact=False):
        y = conv2d_forward(x, self.W, self.b, self.stride, self.padding, exact=exact)
        return y, x

    def backward(self, dy, cache):
        _require_cache(cache)
        dx, dW, db = conv2d_backward(dy, cache, self.W, self.stride, self.padding)
        return dx, {"W": dW, "b": db}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False, exact=False):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dy, cache):
        _require_cache(cache)
        return np.where(cache, dy, 0.0), {}


class BatchNorm(Layer):
    """Batch normalization over features (2-D input) or channels (4-D input).

    In training mode batch statistics are used and the running estimates are
    updated; in eval mode the layer is a fixed affine map.
    """

    kind = "batch_norm"

    def __init__(self, n, momentum=BN_MOMENTUM, eps=BN_EPS):
        super().__init__()
        self.params = {"gamma": np.ones(n), "beta": np.zeros(n)}
        self.running_mean = np.zeros(n)
        self.running_var = np.ones(n)
        self.momentum = momentum
        self.eps = eps

    @property
    def size(self):
        return self.params["gamma"].shape[0]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def out_shape(self, in_shape):
        if in_shape[0] != self.size:
            raise DimensionError(f"batch_norm expects {self.size} features, got {in_shape}")
        return in_shape

    def _bshape(self, x):
        return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)

    def forward(self, x, training=False, exact=False):
        if x.shape[1] != self.size:
            raise DimensionError(f"batch_norm expects {self.size} features, got {x.shape}")
        shape = self._bshape(x)
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        gamma = self.params["gamma"].reshape(shape)
        beta = self.params["beta"].reshape(shape)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = x.size // self.size
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
            unbiased = var * m / max(m - 1, 1)
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
            return gamma * xhat + beta, (True, xhat, inv_std, axes, shape)
        inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
        xhat = (x - self.running_mean.reshape(shape)) * inv_std.reshape(shape)
        return gamma * xhat + beta, (False, xhat, inv_std, axes, shape)

    def backward(self, dy, cache):
        _require_cache(cache)
        training, xhat, inv_std, axes, shape = cache
        gamma = self.params["gamma"].reshape(shape)
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * gamma
        if not training:
            return dxhat * inv_std.reshape(shape), grads
        m = dy.size // self.size
        dx = (inv_std.reshape(shape) / m) * (
            m * dxhat
            - dxhat.sum(axis=axes).reshape(shape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape))
        return dx, grads


class MaxPool2d(Layer):
    """Non-overlapping max pooling with a square window."""

    kind = "max_pool2d"

    def __init__(self, size=2):
        super().__init__()
        self.size = int(size)

    def out_shape(self, in_shape):
        c, h, w = in_shape
        s = self.size
        if h % s or w % s:
            raise DimensionError(f"max_pool2d({s}) needs spatial dims divisible by {s}, got {in_shape}")
        return (c, h // s, w // s)

    def forward(self, x, training=False, exact=False):
        n, c, h, w = x.shape
        s = self.size
        if h % s or w % s:
            raise DimensionError(f"max_pool2d({s}) does not tile {x.shape}")
        cols = x.reshape(n, c, h // s, s, w // s, s).transpose(0, 1, 2, 4, 3, 5)
        cols = cols.reshape(n, c, h // s, w // s, s * s)
        idx = cols.argmax(axis=-1)[..., None]
        return np.take_along_axis(cols, idx, axis=-1)[..., 0], (x.shape, idx)

    def backward(self, dy, cache):
        _require_cache(cache)
        (n, c, h, w), idx = cache
        s = self.size
        cols = np.zeros((n, c, h // s, w // s, s * s))
        np.put_along_axis(cols, idx, dy[..., None], axis=-1)
        dx = cols.reshape(n, c, h // s, w // s, s, s).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(n, c, h, w), {}


class Flatten(Layer):
    kind = "flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False, exact=False):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, cache):
        _require_cache(cache)
        return dy.reshape(cache), {}


def is_weighted(layer):
    return isinstance(layer, (Affine, Conv2d))
