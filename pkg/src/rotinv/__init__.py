"""Image recovery from rotation-averaged third-order invariants."""

from .autocorr import InvariantTensor, compute_a3, debias, dft_s3, estimate_noise_and_mean, estimate_s3, idft_s3
from .basis import BasisIndex, SteerableBasis, bessel_j, bessel_root, build_basis, expand, steer, synthesize
from .errors import NumericalError, RotinvError, ValidationError
from .forward import PrecomputedWeights, s1, s3_direct, s3hat_from_coeffs, s3hat_gradient
from .metrics import ErrorReport, error_recon, error_s3
from .recover import BinningScheme, RecoveryConfig, bin_map, bin_tensor, build_bins, cost_and_grad, recover
from .simulate import Micrograph, Placement, measure_snr, place_targets, render_micrograph, simulate

__version__ = "0.1.0"

__all__ = [
    "BasisIndex",
    "BinningScheme",
    "ErrorReport",
    "InvariantTensor",
    "Micrograph",
    "NumericalError",
    "Placement",
    "PrecomputedWeights",
    "RecoveryConfig",
    "RotinvError",
    "SteerableBasis",
    "ValidationError",
    "bessel_j",
    "bessel_root",
    "bin_map",
    "bin_tensor",
    "build_basis",
    "build_bins",
    "compute_a3",
    "cost_and_grad",
    "debias",
    "dft_s3",
    "error_recon",
    "error_s3",
    "estimate_noise_and_mean",
    "estimate_s3",
    "expand",
    "idft_s3",
    "measure_snr",
    "place_targets",
    "recover",
    "render_micrograph",
    "s1",
    "s3_direct",
    "s3hat_from_coeffs",
    "s3hat_gradient",
    "simulate",
    "steer",
    "synthesize",
]
