"""Tuning the truncation band by Bayesian optimisation.

The best band depends on the weight and value distributions and on the
channel. Its quality is a Monte-Carlo estimate of the averaging error,
which is noisy and has no closed form, so a Gaussian-process surrogate
with expected improvement picks the next band to try.

The printed trace shows the band found at a low and a high PSNR. At low
PSNR the band is narrow, which flattens the weights. At high PSNR it
opens up toward the raw weights, and the ratio delta_min/delta_max
drops by about an order of magnitude.

Run with ``python demos/truncation_search.py``.
"""

import numpy as np

from aircomp_lab.bayesopt import BoConfig, optimize_truncation
from aircomp_lab.channel import SystemConfig, gain_db_for_psnr

pool = np.random.default_rng(1)
fw = pool.exponential(1.0, 20000)  # weight pool
fs = pool.standard_normal(20000)  # value pool
bo = BoConfig(n_init=8, n_iters=20)

for psnr in (10, 60):
    cfg = SystemConfig.from_db(32, 10, 10.0, -90.0, gain_db_for_psnr(psnr, 10.0, -90.0), "rayleigh")
    result = optimize_truncation(bo, fs, fw, cfg, np.random.default_rng(psnr))
    print(f"PSNR {psnr} dB")
    print(f"  {'step':>4} {'delta_min':>10} {'delta_max':>10} {'mse':>10} {'best':>10}")
    for rec in result.trace[:: max(1, len(result.trace) // 8)]:
        print(f"  {rec.step:>4} {rec.delta_min:>10.4g} {rec.delta_max:>10.4g}"
              f" {rec.mse:>10.4g} {rec.best_so_far:>10.4g}")
    theta = result.theta
    print(f"  chosen band [{theta.delta_min:.4g}, {theta.delta_max:.4g}],"
          f" ratio {theta.ratio:.3g}\n")
