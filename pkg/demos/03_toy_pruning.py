"""Train a gated MLP on Gaussian blobs, prune it, and fine-tune.

Only 3 of the 12 input coordinates carry class information here, so the
input gate should learn to switch the other 9 off.
"""

import numpy as np

from vibnet.data import Dataset, synthetic_blobs
from vibnet.network import toy_mlp
from vibnet.prune import prune
from vibnet.tensor import RandomSource
from vibnet.train import TrainConfig, fine_tune, train


def padded(seed):
    base = synthetic_blobs(1500, 3, 3, 5.0, seed)
    noise = RandomSource(seed + 100).standard_normal((len(base), 9))
    return Dataset(np.hstack([base.images, noise]), base.labels, num_classes=3)


tr, te = padded(0), padded(1)
net = toy_mlp([12, 32, 16, 3], seed=0, input_gate=True)
cfg = TrainConfig(gamma_prime=2e-2, epochs=60, batch_size=50, eval_every=20)
net, log = train(net, tr, cfg, te)
for row in log.rows[::20] + log.rows[-1:]:
    print(f"epoch {row['epoch']:>3}  loss {row['total']:.3f}  survivors {row['survivors']}")

print("\ninput alpha:", np.round(net.input_gate.alpha(), 3))
pruned, report = prune(net, 1e-2, eval_data=te)
print(report)

fine_tune(pruned, tr, TrainConfig(epochs=5, batch_size=50, lr=1e-3))
print(f"after fine-tuning: {100 * pruned.error_rate(te.images, te.labels):.2f}% test error")
print("kept inputs:", pruned.input_index.tolist())
