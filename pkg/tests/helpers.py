import numpy as np

from vibnet.gate import TRAIN_SAMPLE
from vibnet.network import Block, Network, conv_block, dense_block, toy_mlp
from vibnet.tensor import Affine, BatchNorm, Flatten, RandomSource


def randomize_bn(net, rng):
    """Give every batch norm non-trivial scale, shift and running statistics."""
    for b in net.blocks:
        for layer in b.layers:
            if isinstance(layer, BatchNorm):
                n = layer.size
                layer.params["gamma"][:] = rng.uniform(n) + 0.5
                layer.params["beta"][:] = rng.standard_normal(n) * 0.3
                layer.running_mean = rng.standard_normal(n) * 0.3
                layer.running_var = rng.uniform(n) + 0.5


def randomize_gates(net, rng, gamma=0.3):
    for _, g in net.gates():
        g.mu[:] = rng.standard_normal(g.width)
        g.log_sigma2[:] = rng.uniform(g.width) * 2 - 3
        g.gamma = gamma


def tiny_conv_net(seed=0, gamma=0.3):
    rng = RandomSource(seed)
    blocks = [conv_block(1, 3, 3, rng, gamma), conv_block(3, 4, 3, rng, gamma, pool=0)]
    fc = dense_block(4 * 2 * 2, 5, rng, gamma)
    fc.layers.insert(0, Flatten())
    blocks.append(fc)
    return Network(blocks, Affine.init(5, 3, rng), None, (1, 10, 10), name="tiny_conv")


def fd_check(net, x, y, bn_train, h=1e-6, seed=0):
    """Analytic vs central-difference gradients of the full loss with frozen noise.

    Returns ``{name: (analytic, numeric)}`` for every parameter array.
    """
    _, cache = net.loss(x, y, TRAIN_SAMPLE, RandomSource(seed), bn_train=bn_train)
    noise = cache.noise
    grads = net.backward(cache)

    def total():
        lb, _ = net.loss(x, y, TRAIN_SAMPLE, noise=noise, bn_train=bn_train)
        return lb.total

    out = {}
    for name, p in net.parameters().items():
        num = np.zeros_like(p)
        flat = p.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + h
            up = total()
            flat[j] = old - h
            down = total()
            flat[j] = old
            num.reshape(-1)[j] = (up - down) / (2 * h)
        out[name] = (grads[name], num)
    net.touch()
    return out


def group_rel_err(a, n):
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(a)), np.max(np.abs(n)), 1e-300))


def gradient_check_nets(seed=0):
    """The 4-8-6-3 MLP (input gate on) and a tiny conv net, with inputs and labels."""
    rng = RandomSource(seed)
    mlp = toy_mlp([4, 8, 6, 3], seed, 0.3, input_gate=True)
    randomize_gates(mlp, rng)
    randomize_bn(mlp, rng)
    conv = tiny_conv_net(seed)
    randomize_gates(conv, rng)
    randomize_bn(conv, rng)
    return [
        (mlp, rng.standard_normal((7, 4)), rng.integers(0, 3, 7)),
        (conv, rng.standard_normal((3, 1, 10, 10)), rng.integers(0, 3, 3)),
    ]


def pre_bn_bias(net, name):
    """True for a bias that feeds a train-mode batch norm (its gradient is exactly 0)."""
    parts = name.split(".")
    if parts[0] != "blocks" or parts[-1] != "b":
        return False
    layers = net.blocks[int(parts[1])].layers
    j = int(parts[3])
    return j + 1 < len(layers) and isinstance(layers[j + 1], BatchNorm)


ACCEPTANCE_LINES = []


def record(number, title, ok, detail):
    """Log one acceptance line (printed in the terminal summary) and assert it."""
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
