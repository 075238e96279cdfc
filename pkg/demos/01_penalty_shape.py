"""How the effective gate penalty behaves once the noise scale is optimized out.

For a gate with mean mu and a data-term curvature a, minimizing the
objective over the noise leaves the penalty gamma * rho(mu; gamma / a).
Small omega makes rho look like a count of nonzeros, large omega makes it
look like a scaled absolute value. This script prints both regimes.
"""

import numpy as np

from vibnet.analysis import optimal_noise_variance, rho

mus = np.array([0.0, 0.01, 0.1, 0.5, 1.0, 2.0])

print("rho(mu; omega) - rho(0; omega)")
print("omega     " + "".join(f"{m:>9.2f}" for m in mus))
for omega in (1e-6, 1e-3, 1e-1, 1e1, 1e3):
    row = rho(mus, omega) - rho(0.0, omega)
    print(f"{omega:<9.0e} " + "".join(f"{v:>9.3f}" for v in row))

# small omega: every nonzero mu pays nearly the same price (an l0-like count)
w = 1e-8
print("\nsmall omega, penalty / log(1/omega):",
      np.round((rho(mus[1:], w) - rho(0.0, w)) / np.log(1 / w), 3))

# large omega: the penalty is 2|mu|/sqrt(omega) (an l1-like norm)
w = 1e6
print("large omega, penalty * sqrt(omega) / 2:",
      np.round((rho(mus, w) - rho(0.0, w)) * np.sqrt(w) / 2, 4))

# the optimal noise variance collapses to 0 with mu, which is what lets
# alpha = mu^2 / sigma^2 serve as a pruning signal
print("\noptimal noise variance at omega = 1:", np.round(optimal_noise_variance(mus, 1.0), 4))
