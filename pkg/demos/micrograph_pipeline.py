"""From a noisy micrograph to a reconstruction.

Rotated copies of a small image are scattered over a large frame with
Gaussian noise.  The third-order autocorrelation of the frame, debiased for
noise, estimates the image's invariant; recovery then runs on that estimate.
The estimate sharpens as the frame grows.

    python demos/micrograph_pipeline.py [m]
"""

import sys
import time

import numpy as np

from rotinv import (
    PrecomputedWeights,
    RecoveryConfig,
    build_bins,
    dft_s3,
    error_recon,
    error_s3,
    estimate_s3,
    measure_snr,
    recover,
    s3_direct,
    simulate,
    steer,
    synthesize,
)
from rotinv.images import model_coefficients

m = int(sys.argv[1]) if len(sys.argv) > 1 else 1024
n, sigma, gamma = 4, 0.5, 1e-3
z0, basis = model_coefficients(n, 30)
print(f"SNR = {measure_snr(z0, basis, sigma):.3f}, frame {m}x{m}, density {gamma}")

start = time.perf_counter()
mg = simulate(z0, basis, m, sigma, seed=1, gamma=gamma)
estimate = estimate_s3(mg, n, mg.gamma)
print(f"{len(mg.placements)} copies; sigma^2 estimate {estimate.meta['sigma2_hat']:.4f} (true {sigma**2})")
print(f"error_s3 = {error_s3(s3_direct(z0, basis), estimate.data):.4f} ({time.perf_counter() - start:.1f} s)")

weights = PrecomputedWeights(basis)
scheme = build_bins(n)
z, _ = recover(dft_s3(estimate).data, basis, scheme, RecoveryConfig(restarts=5, gradient_tolerance=1e-6), weights)
err, _ = error_recon(z0, z, basis)
print(f"error_recon = {err:.3f}")
print("true image / recovered image (rounded):")
aligned = synthesize(steer(z, error_recon(z0, z, basis)[1], basis), basis)
with np.printoptions(precision=2, suppress=True, linewidth=160):
    print(np.hstack([synthesize(z0, basis)[n:3 * n + 1, n:3 * n + 1], aligned[n:3 * n + 1, n:3 * n + 1]]))
