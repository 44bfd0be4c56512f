"""Recovering two history kernels from sixteen EMG-like channels.

Each predictor is the last 40 samples of a channel, the index variable is a
position trace, and the response is built from known surfaces on channels
5 and 12 plus autocorrelated noise.  The selection should single those out.
"""

from safeglasso import BasisSpec, make_basis, safe_select
from safeglasso.simgen import NoiseConfig, gen_emg_like, gen_mimic, mimic_surfaces

delta = 40
pool = gen_emg_like(T=600, K=16, delta=delta, seed=3)
ds, info = gen_mimic(mimic_surfaces(delta), pool, NoiseConfig(theta=1.0, kappa=0.9, seed=3),
                     snr=80.0)
print(f"{ds.n} windows, realized SNR {info['realized_snr']:.1f}")

res = safe_select(ds, make_basis(BasisSpec(-delta, 0.0, 8)), make_basis(BasisSpec(-1.0, 1.0, 5)))
print("selected channels:", [pool.names[k] for k in res.stage2_set])
