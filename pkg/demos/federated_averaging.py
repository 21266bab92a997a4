"""Federated averaging with over-the-air model aggregation.

Twenty clients hold exponentially distributed amounts of data from a
four-class problem. Each round ten of them train a small network
locally, and the server averages the models weighted by data size. The
weight is one number per client, so the weight slot carries a single
scalar.

At a low PSNR the raw data-size weights make the aggregate noisy.
Averaging without weights, or with a tuned truncation band, keeps
training on track.

Run with ``python demos/federated_averaging.py`` (about fifteen seconds).
"""

import numpy as np

from aircomp_lab.channel import RadioSystem, gain_db_for_psnr
from aircomp_lab.fedavg import FlConfig, run_fl

seeds = (0, 1, 2)
for psnr in (15.0, 40.0):
    cfg = FlConfig(rounds=20, seeds=seeds,
                   system=RadioSystem(gain_db=gain_db_for_psnr(psnr, 10.0, -90.0)))
    print(f"PSNR {psnr:g} dB, test accuracy after rounds 0/5/10/20 (mean of {len(seeds)} seeds)")
    for policy in ("noiseless", "pure", "simple", "adaptive"):
        curves = np.array([run_fl(cfg, policy, s) for s in seeds]).mean(axis=0)
        points = " ".join(f"{curves[r]:.3f}" for r in (0, 5, 10, 20))
        print(f"  {policy:>9}: {points}")
    print()
