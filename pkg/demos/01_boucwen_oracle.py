"""Exercise the Bouc-Wen labeling oracle.

Generates one sine-mix displacement history, integrates the hysteretic
reaction force, and saves a force-displacement loop plot next to a check of
the linear-elastic degenerate case.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from selftransfer import BoucWenParams, SineMixConfig, boucwen_response, gen_sine_mix

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

sine = SineMixConfig(n_components=2, period_range=(0.5, 3.0), amplitude_range=(0.5, 1.5),
                     length=512, dt=0.02, target_peak=3.0)
u = gen_sine_mix(sine, seed=12)
u -= u[0]

params = BoucWenParams(k=100.0, alpha=0.05, beta=0.5, gamma=0.5, n_exp=2.0)
r = boucwen_response(u, sine.dt, params)

# sanity: with beta = gamma = 0 the model is a linear spring
linear = BoucWenParams(k=100.0, alpha=0.05, beta=0.0, gamma=0.0)
r_lin = boucwen_response(u, sine.dt, linear)
print("linear-elastic max relative deviation:",
      np.abs(r_lin - 100.0 * u).max() / np.abs(100.0 * u).max())

fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
t = np.arange(u.size) * sine.dt
ax1.plot(t, u, label="displacement")
ax1.plot(t, r / params.k, label="force / k")
ax1.set_xlabel("time [s]")
ax1.legend()
ax2.plot(u, r, lw=0.8)
ax2.set_xlabel("displacement")
ax2.set_ylabel("reaction force")
ax2.set_title("hysteresis loops")
fig.tight_layout()
fig.savefig(OUT / "boucwen_loops.png", dpi=130)
print(f"wrote {OUT / 'boucwen_loops.png'}")
