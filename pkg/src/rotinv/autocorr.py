"""Third-order autocorrelation of a micrograph and its debiasing.

Offsets ``x1, x2`` range over the centred grid ``{-2n, ..., 2n-1}^2``, so
tensors have shape ``(4n, 4n, 4n, 4n)`` with offset ``x`` at index ``x + 2n``.
The micrograph is zero-extended outside its frame.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .errors import InvalidGamma, ShapeMismatch, SizeMismatch, ValidationError
from .grid import centered_dft, centered_idft, grid_coords

logger = logging.getLogger(__name__)

REAL_OFFSETS = "real-offsets"
FREQUENCY = "frequency"
S3_NORMALIZED = "S3-normalized"
A3_RAW = "A3-raw"


@dataclass
class InvariantTensor:
    """A ``(4n)^4`` invariant in the offset or frequency domain."""

    n: int
    data: np.ndarray
    space: str = REAL_OFFSETS
    scale: str = S3_NORMALIZED
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        L = 4 * self.n
        if self.data.shape != (L, L, L, L):
            raise ShapeMismatch(f"invariant for n={self.n} must have shape {(L,) * 4}, got {self.data.shape}")
        if self.space not in (REAL_OFFSETS, FREQUENCY):
            raise ValidationError(f"unknown space {self.space!r}")
        if self.scale not in (S3_NORMALIZED, A3_RAW):
            raise ValidationError(f"unknown scale {self.scale!r}")

    def metadata(self):
        return {"n": self.n, "space": self.space, "scale": self.scale, **self.meta}


def _pixels(M):
    return np.asarray(getattr(M, "pixels", M), dtype=float)


def _symmetrize(T, L):
    # keep the x1 <= x2 triangle (flat order) and mirror it
    flat = T.reshape(L * L, L * L)
    upper = np.triu(flat)
    return (upper + np.triu(flat, 1).T).reshape(L, L, L, L)


def _offset_plan(n):
    """Offsets ``u`` whose FFT correlations cover every row of ``A3``.

    ``A3(-u, x2) = A3(u, x2 + u)``, so row ``-u`` is read from the correlation
    for ``u`` at shifted lags.  Only ``u = 0``, the lexicographically positive
    offsets and those whose negation leaves the grid get their own transform.
    """
    r = range(-2 * n, 2 * n)
    plan = []
    for u1 in r:
        for u2 in r:
            mirrored = -2 * n < u1 and -2 * n < u2
            if (u1, u2) > (0, 0) or (u1, u2) == (0, 0) or not mirrored:
                plan.append((u1, u2, mirrored and (u1, u2) != (0, 0)))
    return plan


def _a3_fft(M, n, threads=1, tile=128):
    m = M.shape[0]
    L = 4 * n
    h = 4 * n  # lags up to 4n are read for mirrored rows
    T = min(tile, m)
    nt = -(-m // T)
    mp = nt * T
    padded = np.zeros((mp + 2 * h, mp + 2 * h))
    padded[h : h + m, h : h + m] = M
    size = sfft.next_fast_len(T + 2 * h, real=True)
    windows = np.lib.stride_tricks.sliding_window_view(padded, (T + 2 * h, T + 2 * h))[::T, ::T]
    M_hat = sfft.rfft2(windows, s=(size, size))
    x1, x2 = grid_coords(n)
    out = np.empty((L, L, L, L))
    core = padded[h : h + mp, h : h + mp]

    def row(job):
        u1, u2, mirrored = job
        shifted = padded[h + u1 : h + u1 + mp, h + u2 : h + u2 + mp]
        P = (core * shifted).reshape(nt, T, nt, T).transpose(0, 2, 1, 3)
        # sum_x P(x) M(x + d) accumulated over tiles in the Fourier domain
        acc = np.einsum("ijab,ijab->ab", np.conj(sfft.rfft2(P, s=(size, size))), M_hat)
        corr = sfft.irfft2(acc, s=(size, size))
        out[u1 + 2 * n, u2 + 2 * n] = corr[x1 + h, x2 + h]
        if mirrored:
            out[2 * n - u1, 2 * n - u2] = corr[x1 + u1 + h, x2 + u2 + h]

    jobs = _offset_plan(n)
    if threads == 1:
        for job in jobs:
            row(job)
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            list(pool.map(row, jobs))
    return out


def _a3_direct(M, n, chunk=4096):
    m = M.shape[0]
    L = 4 * n
    padded = np.zeros((m + 4 * n, m + 4 * n))
    padded[2 * n : 2 * n + m, 2 * n : 2 * n + m] = M
    x1, x2 = grid_coords(n)
    o1 = (x1 + 2 * n).ravel()
    o2 = (x2 + 2 * n).ravel()
    rows, cols = np.divmod(np.arange(m * m), m)
    vals = M.ravel()
    acc = np.zeros((L * L, L * L))
    for start in range(0, m * m, chunk):
        r = rows[start : start + chunk, None]
        c = cols[start : start + chunk, None]
        G = padded[r + o1[None, :], c + o2[None, :]]
        acc += G.T @ (vals[start : start + chunk, None] * G)
    return acc.reshape(L, L, L, L)


def compute_a3(M, n, method="fft", threads=1):
    """Third-order autocorrelation ``(1/m^2) sum_x M(x) M(x+x1) M(x+x2)``.

    :param M: a :class:`~rotinv.simulate.Micrograph` or square array.
    :param method: ``"fft"`` (tiled FFT correlations, one per ``x1`` up to
        the ``x1 -> -x1`` symmetry) or ``"direct"`` (explicit sum over every
        pixel, for small frames).
    :param threads: worker threads for the FFT method (0 = all cores); the
        result does not depend on it.
    """
    pixels = _pixels(M)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise SizeMismatch("micrograph must be a square array")
    m = pixels.shape[0]
    if m <= 4 * n:
        raise SizeMismatch(f"m={m} must exceed 4n={4 * n}")
    if method == "fft":
        raw = _a3_fft(pixels, n, threads)
    elif method == "direct":
        raw = _a3_direct(pixels, n)
    else:
        raise ValidationError(f"unknown method {method!r}")
    data = _symmetrize(raw / (m * m), 4 * n)
    return InvariantTensor(n=n, data=data, space=REAL_OFFSETS, scale=A3_RAW, meta={"m": m})


def estimate_noise_and_mean(M):
    """Sample variance (unbiased) and mean of the pixel values.

    The variance estimates the noise level only when the signal contributes
    little to the pixel spread, i.e. at low SNR.
    """
    pixels = _pixels(M)
    if pixels.size < 2:
        raise SizeMismatch("need at least two pixels")
    return float(np.var(pixels, ddof=1)), float(np.mean(pixels))


def delta_slices(n):
    """``delta(x1) + delta(x2) + delta(x1 - x2)`` on the offset grid."""
    L = 4 * n
    d = np.zeros((L * L, L * L))
    origin = 2 * n * L + 2 * n
    d[origin, :] += 1
    d[:, origin] += 1
    d[np.arange(L * L), np.arange(L * L)] += 1
    return d.reshape(L, L, L, L)


def debias(a3, sigma2_hat, mean_hat, gamma):
    """Remove the noise terms and the ``gamma / 2 pi`` factor from ``A3``.

    ``S3* = (2 pi / gamma) (A3 - sigma2_hat * mean_hat * (delta(x1) + delta(x2) + delta(x1 - x2)))``,
    with ``mean_hat`` standing in for ``gamma S1 / 2 pi``.
    """
    if not gamma > 0:
        raise InvalidGamma(f"gamma must be positive, got {gamma}")
    if a3.space != REAL_OFFSETS:
        raise ValidationError("debias expects an offset-domain tensor")
    data = (2 * np.pi / gamma) * (a3.data - sigma2_hat * mean_hat * delta_slices(a3.n))
    meta = {**a3.meta, "sigma2_hat": sigma2_hat, "mean_hat": mean_hat, "gamma": gamma}
    return InvariantTensor(n=a3.n, data=data, space=REAL_OFFSETS, scale=S3_NORMALIZED, meta=meta)


def dft_s3(T):
    """Four-dimensional centred DFT over both offsets."""
    if T.space != REAL_OFFSETS:
        raise ValidationError("dft_s3 expects an offset-domain tensor")
    return replace(T, data=centered_dft(T.data, ndim=4), space=FREQUENCY)


def idft_s3(T):
    if T.space != FREQUENCY:
        raise ValidationError("idft_s3 expects a frequency-domain tensor")
    return replace(T, data=centered_idft(T.data, ndim=4), space=REAL_OFFSETS)


def estimate_s3(M, n, gamma, method="fft", threads=1):
    """``debias(compute_a3(M))`` with noise and mean estimated from ``M``."""
    sigma2_hat, mean_hat = estimate_noise_and_mean(M)
    return debias(compute_a3(M, n, method=method, threads=threads), sigma2_hat, mean_hat, gamma)
