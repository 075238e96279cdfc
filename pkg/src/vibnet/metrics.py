"""Compression metrics: weight ratio, multiply count, and feature-map ratio.

Architectures are summarized as an :class:`Arch`, i.e. the list of weighted
layers plus the sizes of the gated feature maps. Plain width lists such as
``[784, 300, 100, 10]`` are accepted wherever an ``Arch`` is, and describe a
dense chain whose input is gated.
"""

from dataclasses import dataclass

from .errors import InputError


@dataclass(frozen=True)
class DenseShape:
    n_in: int
    n_out: int

    @property
    def weights(self):
        return self.n_in * self.n_out

    @property
    def flops(self):
        return self.n_in * self.n_out


@dataclass(frozen=True)
class ConvShape:
    c_in: int
    c_out: int
    k: int
    h_out: int
    w_out: int

    @property
    def weights(self):
        return self.c_in * self.c_out * self.k * self.k

    @property
    def flops(self):
        return self.weights * self.h_out * self.w_out


@dataclass(frozen=True)
class Arch:
    """Weighted layers in order, plus the gated units.

    ``widths`` counts gated units (neurons or channels) per gated layer and
    ``features`` the matching feature-map sizes (channels x height x width).
    The input appears in both iff it is gated.
    """

    layers: tuple
    widths: tuple
    features: tuple
    input_gated: bool = True

    def __str__(self):
        return "-".join(str(w) for w in self.widths)


def dense_arch(widths, input_gated=True):
    """``Arch`` for a dense chain ``[d_in, h_1, ..., h_L, d_out]``."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise InputError(f"invalid width list {widths}")
    layers = tuple(DenseShape(a, b) for a, b in zip(widths[:-1], widths[1:]))
    gated = widths[:-1] if input_gated else widths[1:-1]
    return Arch(layers, tuple(gated), tuple(gated), input_gated)


def parse_widths(text):
    """``"97-71-33"`` -> ``[97, 71, 33]``."""
    try:
        return [int(p) for p in text.replace(" ", "").split("-")]
    except ValueError as exc:
        raise InputError(f"bad architecture string {text!r}") from exc


def _as_arch(arch, input_gated=True):
    if isinstance(arch, Arch):
        return arch
    return dense_arch(arch, input_gated)


def _paired(original, pruned, input_gated):
    original = _as_arch(original, input_gated)
    if not isinstance(pruned, Arch):
        pruned = list(pruned)
        # a pruned dense chain may omit the (unprunable) output width
        if len(pruned) == len(original.layers):
            pruned = pruned + [original.layers[-1].n_out]
        pruned = dense_arch(pruned, input_gated)
    if len(original.layers) != len(pruned.layers):
        raise InputError(
            f"layer count mismatch: original {len(original.layers)} vs pruned {len(pruned.layers)}")
    if len(original.features) != len(pruned.features):
        raise InputError("gated layer count mismatch between architectures")
    return original, pruned


def compute_r_w(original, pruned, input_gated=True):
    """Percentage of weights kept (biases excluded)."""
    original, pruned = _paired(original, pruned, input_gated)
    total = sum(l.weights for l in original.layers)
    return 100.0 * sum(l.weights for l in pruned.layers) / total


def compute_flops(arch, input_gated=True):
    """Multiplications needed for one prediction; additions and gates excluded."""
    return int(sum(l.flops for l in _as_arch(arch, input_gated).layers))


def compute_r_n(original, pruned, input_gated=True):
    """Percentage of gated feature-map storage kept."""
    original, pruned = _paired(original, pruned, input_gated)
    return 100.0 * sum(pruned.features) / sum(original.features)
