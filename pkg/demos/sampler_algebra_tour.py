"""A numerical tour of the action-chunk diffusion sampler.

The schedule stores per-step signal retention beta^k (near 1), per-step
noise gamma^k = 1 - beta^k, and the cumulative product beta_bar^k with
beta_bar^0 = 1. Three identities make the sampler trustworthy, and this
script checks each one on concrete numbers:

  1. the final denoising step (k=1) returns the model's clean-chunk
     prediction exactly,
  2. feeding the sampler its own noiseless forward path reproduces
     sqrt(beta_bar^{k-1}) * a0 at every step,
  3. forward-noising to the last step and running the full reverse
     chain with oracle predictions recovers the input chunk.
"""

import numpy as np

from partfield import diffusion
from partfield.rng import rng_from

schedule = diffusion.make_schedule(50, "linear", 1e-4, 0.02)
print("K =", schedule.K)
print("beta_bar endpoints:", schedule.beta_bar[0], "->",
      float(schedule.beta_bar[-1]))

a0 = rng_from(0, "demo-a0").normal(size=(16, 4)) / 4.0

# identity 1: k=1 returns the prediction
ak = rng_from(0, "demo-ak").normal(size=(16, 4))
step = diffusion.ddim_step(ak, a0, 1, schedule)
print("k=1 identity max error:", float(np.abs(step - a0).max()))

# identity 2: the noiseless path
errs = []
for k in range(1, schedule.K + 1):
    ak = np.sqrt(schedule.beta_bar[k]) * a0
    out = diffusion.ddim_step(ak, a0, k, schedule)
    want = np.sqrt(schedule.beta_bar[k - 1]) * a0
    errs.append(np.abs(out - want).max())
print("noiseless-path max error over all k:", float(max(errs)))

# identity 3: forward-noise to the last step (zero noise), then run the
# whole reverse chain with oracle clean-chunk predictions
a = diffusion.forward_noise(a0, schedule.K, 0.0, schedule)
for k in range(schedule.K, 0, -1):
    a = diffusion.ddim_step(a, a0, k, schedule)
print("full reverse chain max error:", float(np.abs(a - a0).max()))

# the stochastic mode's noise scale is zero at the last step
taus = [diffusion.ddpm_tau(k, schedule) for k in range(1, schedule.K + 1)]
print("tau(1) =", taus[0], " max tau =", float(max(taus)))
