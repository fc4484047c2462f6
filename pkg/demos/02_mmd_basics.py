"""Feel out the multi-kernel MMD statistics.

Shows the distance between matched and shifted Gaussian samples, the
bandwidth ladder around the median heuristic, and the sigmoid weight
schedule used during adaptation training.
"""

import numpy as np

from selftransfer import MkMmdConfig, median_bandwidth, mk_mmd, mmd_weight

rng = np.random.default_rng(0)
a = rng.normal(size=(64, 8))
b_same = rng.normal(size=(64, 8))
b_shifted = rng.normal(size=(64, 8)) + 0.8

cfg = MkMmdConfig()  # 5 Gaussian kernels on a geometric ladder, biased estimator
print("median pairwise distance (matched):", round(median_bandwidth(a, b_same), 3))
print("mmd^2 same distribution:   ", float(mk_mmd(a, b_same, cfg)))
print("mmd^2 shifted distribution:", float(mk_mmd(a, b_shifted, cfg)))

unbiased = MkMmdConfig(estimator="unbiased")
print("unbiased same distribution:", float(mk_mmd(a, b_same, unbiased)))

print("\nweight schedule lambda(n_b/N):")
for frac in (0.0, 0.1, 0.25, 0.5, 1.0):
    print(f"  {frac:4.2f} -> {mmd_weight(int(frac * 1000), 1000):.6f}")
