"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"VIBN"  u16 version
    u32 descriptor length, UTF-8 JSON architecture descriptor
    u64 seed  u32 epoch  u32 array count
    per array: u16 name length, UTF-8 name, u8 dtype tag (1 = f32),
               u8 ndim, ndim x u32 dims, payload

Arrays are stored as float32, so a reloaded network matches the saved one
to float32 round-off. No timestamps are written, so identical networks
serialize to identical bytes.
"""

import json
import struct

import numpy as np

from .errors import InputError, ParseError
from .gate import VibGate
from .metrics import Arch, ConvShape, DenseShape
from .network import Block, Network
from .tensor import Affine, BatchNorm, Conv2d, Flatten, MaxPool2d, ReLU

MAGIC = b"VIBN"
VERSION = 1
DTYPE_F32 = 1


# ---------------------------------------------------------- descriptor

def _layer_desc(layer):
    if isinstance(layer, Conv2d):
        return {"kind": "conv2d", "stride": layer.stride, "padding": layer.padding}
    if isinstance(layer, BatchNorm):
        return {"kind": "batch_norm", "momentum": layer.momentum, "eps": layer.eps}
    if isinstance(layer, MaxPool2d):
        return {"kind": "max_pool2d", "size": layer.size}
    if isinstance(layer, (Affine, ReLU, Flatten)):
        return {"kind": layer.kind}
    raise InputError(f"cannot serialize layer {type(layer).__name__}")


def _gate_desc(gate):
    return {"gamma": gate.gamma, "per_channel": gate.per_channel}


def _arch_desc(arch):
    if arch is None:
        return None
    layers = []
    for l in arch.layers:
        if isinstance(l, ConvShape):
            layers.append(["conv", l.c_in, l.c_out, l.k, l.h_out, l.w_out])
        else:
            layers.append(["dense", l.n_in, l.n_out])
    return {"layers": layers, "widths": list(arch.widths), "features": list(arch.features),
            "input_gated": arch.input_gated}


def _arch_from(desc):
    if desc is None:
        return None
    layers = []
    for l in desc["layers"]:
        layers.append(ConvShape(*l[1:]) if l[0] == "conv" else DenseShape(*l[1:]))
    return Arch(tuple(layers), tuple(desc["widths"]), tuple(desc["features"]), desc["input_gated"])


def describe(net):
    """JSON-ready architecture descriptor (array shapes live with the arrays)."""
    return {
        "name": net.name,
        "likelihood": net.likelihood,
        "input_shape": list(net.input_shape),
        "depth_includes_input": net.depth_includes_input,
        "input_gate": None if net.input_gate is None else _gate_desc(net.input_gate),
        "blocks": [{"layers": [_layer_desc(l) for l in b.layers], "gate": _gate_desc(b.gate)}
                   for b in net.blocks],
        "original_arch": _arch_desc(net.original_arch),
    }


def arrays_of(net):
    arrays = dict(net.parameters())
    arrays.update(net.buffers())
    if net.input_index is not None:
        arrays["input_index"] = net.input_index
    return arrays


# ---------------------------------------------------------------- save

def to_bytes(net, seed=0, epoch=0):
    desc = json.dumps(describe(net), sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = arrays_of(net)
    out = [MAGIC, struct.pack("<H", VERSION), struct.pack("<I", len(desc)), desc,
           struct.pack("<QII", seed, epoch, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<BB", DTYPE_F32, arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f4").tobytes())
    return b"".join(out)


def save(net, path, seed=0, epoch=0):
    with open(path, "wb") as fh:
        fh.write(to_bytes(net, seed, epoch))


# ---------------------------------------------------------------- load

class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise ParseError(f"truncated {what}", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_bytes(data):
    """Parse checkpoint bytes into ``(descriptor, arrays, seed, epoch)``."""
    r = _Reader(bytes(data))
    if r.take(4, "magic") != MAGIC:
        raise ParseError("bad checkpoint magic", 0)
    (version,) = r.unpack("<H", "version")
    if version != VERSION:
        raise ParseError(f"unsupported checkpoint version {version}", 4)
    (n,) = r.unpack("<I", "descriptor length")
    at = r.pos
    try:
        desc = json.loads(r.take(n, "descriptor").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad descriptor: {exc}", at) from exc
    seed, epoch, count = r.unpack("<QII", "header")
    arrays = {}
    for _ in range(count):
        (ln,) = r.unpack("<H", "array name length")
        name = r.take(ln, "array name").decode("utf-8")
        at = r.pos
        tag, ndim = r.unpack("<BB", "array header")
        if tag != DTYPE_F32:
            raise ParseError(f"unknown dtype tag {tag} for {name!r}", at)
        shape = r.unpack(f"<{ndim}I", "array shape")
        size = int(np.prod(shape, dtype=np.int64))
        payload = r.take(4 * size, f"payload of {name!r}")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise ParseError("trailing bytes after last array", r.pos)
    return desc, arrays, seed, epoch


def _need(arrays, name):
    if name not in arrays:
        raise InputError(f"checkpoint is missing array {name!r}")
    return arrays[name].copy()


def _gate_from(desc, arrays, prefix):
    return VibGate(_need(arrays, f"{prefix}.mu"), _need(arrays, f"{prefix}.log_sigma2"),
                   desc["gamma"], desc["per_channel"])


def _layer_from(desc, arrays, prefix):
    kind = desc["kind"]
    if kind == "affine":
        return Affine(_need(arrays, f"{prefix}.W"), _need(arrays, f"{prefix}.b"))
    if kind == "conv2d":
        return Conv2d(_need(arrays, f"{prefix}.W"), _need(arrays, f"{prefix}.b"),
                      desc["stride"], desc["padding"])
    if kind == "batch_norm":
        gamma = _need(arrays, f"{prefix}.gamma")
        bn = BatchNorm(gamma.shape[0], desc["momentum"], desc["eps"])
        bn.params = {"gamma": gamma, "beta": _need(arrays, f"{prefix}.beta")}
        bn.running_mean = _need(arrays, f"{prefix}.running_mean")
        bn.running_var = _need(arrays, f"{prefix}.running_var")
        return bn
    if kind == "relu":
        return ReLU()
    if kind == "max_pool2d":
        return MaxPool2d(desc["size"])
    if kind == "flatten":
        return Flatten()
    raise InputError(f"unknown layer kind {kind!r} in checkpoint")


def build(desc, arrays):
    """Reconstruct a :class:`Network` from a descriptor and its arrays."""
    try:
        blocks = []
        for i, bd in enumerate(desc["blocks"]):
            layers = [_layer_from(ld, arrays, f"blocks.{i}.layers.{j}")
                      for j, ld in enumerate(bd["layers"])]
            blocks.append(Block(layers, _gate_from(bd["gate"], arrays, f"blocks.{i}.gate")))
        input_gate = None
        if desc["input_gate"] is not None:
            input_gate = _gate_from(desc["input_gate"], arrays, "input_gate")
        head = Affine(_need(arrays, "head.W"), _need(arrays, "head.b"))
        index = arrays.get("input_index")
        return Network(blocks, head, input_gate, tuple(desc["input_shape"]), desc["likelihood"],
                       None if index is None else np.rint(index).astype(np.int64),
                       desc["depth_includes_input"], _arch_from(desc["original_arch"]),
                       desc["name"])
    except KeyError as exc:
        raise InputError(f"checkpoint descriptor is missing field {exc}") from exc


def from_bytes(data):
    """Returns ``(network, seed, epoch)``."""
    desc, arrays, seed, epoch = read_bytes(data)
    return build(desc, arrays), seed, epoch


def load(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read())
