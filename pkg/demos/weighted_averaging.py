"""Weighted averaging over the air: why truncating the weights helps.

Eight nodes each hold a weight and a value per element and the receiver
wants the weighted average. Sending the weights unchanged lets the node
with the largest message norm set the power scaling for everybody, so at
low SNR the noise swamps the estimate. Averaging without weights is
robust but biased. Clamping the weights into a band trades a little bias
for a much larger received power.

Run with ``python demos/weighted_averaging.py``.
"""

import numpy as np

from aircomp_lab.aircomp import (
    TruncationParams,
    adaptive_weighted_average,
    exact_weighted_average,
    pure_weighted_average,
    simple_average,
)
from aircomp_lab.channel import SystemConfig, draw_channel_slots, gain_db_for_psnr

M, L, ROUNDS = 8, 10, 2000
rng = np.random.default_rng(0)
w = rng.exponential(1.0, size=(ROUNDS, M, L))
s = rng.standard_normal((ROUNDS, M, L))
target = exact_weighted_average(w, s)
band = TruncationParams(0.3, 2.0)

print("median squared error (share of rounds with squared error above 1)")
print(f"{'PSNR dB':>8} {'pure':>20} {'simple':>20} {'truncated':>20}")
for psnr in (10, 20, 30, 40, 60):
    cfg = SystemConfig.from_db(M, L, 10.0, -90.0, gain_db_for_psnr(psnr, 10.0, -90.0), "rayleigh")
    slots = draw_channel_slots(cfg, rng, size=ROUNDS)
    results = {
        "pure": pure_weighted_average(w, s, slots, cfg, rng).estimate,
        "simple": simple_average(s, slots[0], cfg, rng).estimate,
        "truncated": adaptive_weighted_average(w, s, band, slots, cfg, rng).estimate,
    }
    # a deep fade on the weight slot can blow up a single round, so report
    # the median together with how often that happens
    cells = []
    for k in ("pure", "simple", "truncated"):
        err = (results[k] - target) ** 2
        cells.append(f"{np.median(err):>10.4g} ({np.mean(err > 1):6.2%})")
    print(f"{psnr:>8} " + " ".join(f"{c:>20}" for c in cells))

print("\nAt low PSNR the raw weights blow up more often than the band does.")
print("At high PSNR the raw weights win, because the band's bias no longer pays for itself.")
print("demos/truncation_search.py tunes the band for each PSNR instead.")
