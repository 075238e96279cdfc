"""Sanity checks for the kNN mutual-information estimator.

Correlated Gaussians have a closed-form MI, so we can see the estimator's
bias shrink with the sample size, and its behaviour as dimension grows.
"""

import numpy as np

from vibnet.analysis import gaussian_mi, ksg_mutual_information
from vibnet.tensor import RandomSource

rng = RandomSource(0)
for r in (0.0, 0.5, 0.9, 0.99):
    truth = gaussian_mi(r) if r else 0.0
    line = []
    for n in (200, 1000, 5000):
        x = rng.standard_normal(n)
        y = r * x + np.sqrt(1 - r * r) * rng.standard_normal(n)
        line.append(ksg_mutual_information(x, y, k=5).value)
    print(f"r = {r:<5} true {truth:.3f}   n=200/1000/5000: " + "  ".join(f"{v:.3f}" for v in line))

# d independent copies of a correlated pair: the true MI adds up, the
# estimate falls increasingly short as the dimension grows
print()
for d in (1, 4, 16, 64):
    x = rng.standard_normal((2000, d))
    y = 0.9 * x + np.sqrt(1 - 0.81) * rng.standard_normal((2000, d))
    est = ksg_mutual_information(x, y, k=5).value
    print(f"d = {d:<3} true {d * gaussian_mi(0.9):7.2f}   estimate {est:6.2f}")
