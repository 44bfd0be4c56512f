"""Distribution-free prediction bands around the selected model.

The split band fits on one half and calibrates a single width on the other.
The rank-one-out band gives each in-sample point its own width from the
residuals of the opposite half.  Both should cover close to 1 - alpha.
"""

import numpy as np

from safeglasso import BasisSpec, SafeAlgorithm, conformal_pair, coverage_stats, make_basis
from safeglasso.simgen import ToyConfig, gen_toy

full, _ = gen_toy(ToyConfig(N=450, K=6, R=50, C=2.0, seed=5))
train, new = full.subset(np.arange(300)), full.subset(np.arange(300, 450))

algo = SafeAlgorithm(make_basis(BasisSpec(0.0, 1.0, 10)), make_basis(BasisSpec(-1.0, 1.0, 5)))
bands = conformal_pair(train, new, [0.1, 0.2], seed=0, fit_algorithm=algo)

for alpha, pair in bands.items():
    cov_s, width_s, _ = coverage_stats(pair["split"], new.y)
    cov_r, width_r, _ = coverage_stats(pair["roo"], train.y)
    print(f"alpha {alpha}: split coverage {cov_s:.3f} width {width_s:.3f} | "
          f"rank-one-out coverage {cov_r:.3f} mean width {width_r:.3f}")
