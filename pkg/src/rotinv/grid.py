"""Pixel grid and centred DFT helpers.

All images live on the square grid ``{-2n, ..., 2n-1}^2`` stored as
``(4n, 4n)`` arrays, with pixel ``x`` at array index ``x + 2n``.  The first
array axis is the first coordinate.
"""

import numpy as np


def grid_size(n):
    return 4 * n


def grid_coords(n):
    """Return integer coordinate arrays ``(x1, x2)`` of shape ``(4n, 4n)``."""
    r = np.arange(-2 * n, 2 * n)
    return np.meshgrid(r, r, indexing="ij")


def support_mask(n):
    """Boolean mask of the pixels strictly inside the disk of radius ``n``."""
    x1, x2 = grid_coords(n)
    return x1**2 + x2**2 < n**2


def centered_dft(a, ndim=2):
    """DFT over the last ``ndim`` axes with both grids centred at index ``2n``.

    ``out[k] = sum_x a[x] exp(-2 pi i k.x / 4n)`` for ``x, k`` in the centred
    grid.  With ``ndim=4`` this is the transform of a tensor on pairs of
    offsets.
    """
    axes = tuple(range(-ndim, 0))
    return np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(a, axes=axes), axes=axes), axes=axes)


def centered_idft(a, ndim=2):
    axes = tuple(range(-ndim, 0))
    return np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(a, axes=axes), axes=axes), axes=axes)


def negated_index(n):
    """Flat index of ``-k (mod 4n)`` for every flat frequency index ``k``."""
    L = 4 * n
    i = np.arange(L)
    neg = (-(i - 2 * n)) % L
    neg = (neg + 2 * n) % L
    return (neg[:, None] * L + neg[None, :]).ravel()


def third_index(n, i1, i2):
    """Flat index of ``-k1-k2`` reduced modulo ``4n`` into the centred grid.

    :param i1: flat indices of ``k1`` (any shape).
    :param i2: flat indices of ``k2``, broadcastable against ``i1``.
    """
    L = 4 * n
    a1, b1 = np.divmod(i1, L)
    a2, b2 = np.divmod(i2, L)
    # shifted coordinates are k + 2n; -k1-k2 + 2n = 6n - (a1 + a2)
    a3 = (6 * n - a1 - a2) % L
    b3 = (6 * n - b1 - b2) % L
    return a3 * L + b3
