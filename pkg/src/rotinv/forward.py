"""Rotation-averaged invariants of a model image.

The bispectrum of the coefficient vector ``z`` is evaluated through the
angular quadrature

    S3hat(k1, k2) = (2 pi / N) sum_phi Fhat_phi(k1) Fhat_phi(k2) Fhat_phi(-k1-k2),

where ``Fhat_phi = sum_v z_v Psihat_v exp(i nu_v phi)`` is the DFT of the image
steered by ``phi`` and ``phi`` runs over ``N`` equispaced angles.  The product
is a trigonometric polynomial of degree at most ``3 nu_max`` in ``phi``, so
the quadrature is exact once ``N > 3 nu_max``; the default ``N = 6 nu_max``
has a factor-two margin.  The ``2 pi / N`` weight keeps every invariant on
the same normalization as the continuous angular integral.

Frequencies are handled as flat indices into the ``(4n)^2`` centred grid and
``-k1-k2`` is reduced modulo ``4n``.
"""

import numpy as np
from scipy import sparse

from .basis import check_reality, steer, synthesize
from .errors import BasisMismatch, ShapeMismatch
from .grid import centered_dft, grid_coords, support_mask, third_index

# complex entries held in memory per chunk of (angle, pair) products
_CHUNK_ELEMENTS = 1 << 22


def default_quadrature(nu_max):
    return max(6 * nu_max, 1)


class PrecomputedWeights:
    """Angular quadrature and steering phases for one basis.

    The weight vectors ``w_{k,phi}`` are never materialized; they factor as
    ``Psihat_v(k) * exp(i nu_v phi)``, which :meth:`fourier` and
    :meth:`adjoint` apply directly.

    :param basis: the :class:`~rotinv.basis.SteerableBasis`.
    :param N: number of quadrature angles, ``6 nu_max`` by default.
    """

    def __init__(self, basis, N=None):
        self.basis = basis
        self.N = int(N) if N is not None else default_quadrature(basis.nu_max)
        if self.N < 1:
            raise ValueError("quadrature order must be positive")
        self.angles = 2 * np.pi * np.arange(self.N) / self.N
        self.nus = np.arange(-basis.nu_max, basis.nu_max + 1)
        self.phases = np.exp(1j * np.outer(self.angles, self.nus))
        self._group = basis.nu + basis.nu_max
        L = 4 * basis.n
        self._psi_hat = basis.psi_hat.reshape(len(basis), L * L)

    @property
    def n(self):
        return self.basis.n

    @property
    def weight(self):
        return 2 * np.pi / self.N

    def fourier(self, z):
        """``Fhat_phi(k)`` for every quadrature angle, shape ``(N, (4n)^2)``."""
        z = np.asarray(z, dtype=complex)
        B = np.zeros((len(self.nus), self._psi_hat.shape[1]), complex)
        np.add.at(B, self._group, z[:, None] * self._psi_hat)
        return self.phases @ B

    def adjoint(self, H):
        """Map a cotangent ``H[phi, k]`` on ``Fhat`` back to ``z``.

        Returns ``R_v = sum_{phi,k} H[phi,k] Psihat_v(k) exp(i nu_v phi)``.
        """
        C = self.phases.T @ H
        return np.einsum("vk,vk->v", C[self._group], self._psi_hat)


def _check_weights(basis, weights):
    if not basis.same_as(weights.basis):
        raise BasisMismatch("weights were built for a different basis")


def s1(z, basis):
    """Angular integral of the total intensity.

    Rotation averaging removes every ``nu != 0`` term, leaving
    ``2 pi * sum_x sum_q z_{0,q} Psi_{0,q}(x)``.
    """
    check_reality(z, basis)
    z = np.asarray(z)
    radial = basis.nu == 0
    return float(2 * np.pi * np.real(z[radial] @ basis.psi[radial].sum(axis=(1, 2))))


def triple_correlation(image, n):
    """Plain third-order autocorrelation of an image on the centred grid.

    ``T[x1, x2] = sum_x F(x) F(x + x1) F(x + x2)`` for ``x1, x2`` in the
    grid, computed as ``G^T diag(F) G`` with ``G[x, x1] = F(x + x1)`` taken
    over the support pixels.  No Fourier transforms are involved.
    """
    L = 4 * n
    image = np.asarray(image, dtype=float)
    padded = np.zeros((3 * L, 3 * L))
    padded[L : 2 * L, L : 2 * L] = image
    nz = np.argwhere(image != 0)
    if len(nz) == 0:
        return np.zeros((L, L, L, L))
    x1, x2 = grid_coords(n)
    offs1 = (x1 + 2 * n).ravel()
    offs2 = (x2 + 2 * n).ravel()
    # row index of x + x1 in padded coordinates: (x + 2n) + L + (x1) = a + L + off - 2n
    rows = nz[:, 0:1] + L - 2 * n + offs1[None, :]
    cols = nz[:, 1:2] + L - 2 * n + offs2[None, :]
    G = padded[rows, cols]
    vals = image[nz[:, 0], nz[:, 1]]
    T = G.T @ (vals[:, None] * G)
    return T.reshape(L, L, L, L)


def s3_direct(z, basis, N=None):
    """Real-space invariant ``S3`` by quadrature over steered images.

    Returns a real ``(4n, 4n, 4n, 4n)`` array indexed by the two offsets.
    """
    check_reality(z, basis)
    N = int(N) if N is not None else default_quadrature(basis.nu_max)
    L = 4 * basis.n
    out = np.zeros((L, L, L, L))
    for phi in 2 * np.pi * np.arange(N) / N:
        out += triple_correlation(synthesize(steer(z, phi, basis), basis), basis.n)
    out *= 2 * np.pi / N
    return out


def all_pairs(n):
    """Flat index arrays ``(i1, i2)`` over every frequency pair."""
    L2 = (4 * n) ** 2
    i1, i2 = np.divmod(np.arange(L2 * L2), L2)
    return i1, i2


def orbit_representatives(n):
    """Smallest flat pair index in the symmetry orbit of every pair.

    For real images the rotation-averaged bispectrum is unchanged by swapping
    ``k1, k2`` and by quarter turns of both frequencies (the pixel grid is
    closed under them), so one value per orbit of this 8-element group
    determines the whole tensor.
    """
    L = 4 * n
    L2 = L * L
    i1, i2 = all_pairs(n)

    def quarter_turn(i):
        a, b = np.divmod(i, L)
        # (k1, k2) -> (-k2, k1) with indices reduced into the grid
        return ((4 * n - b) % L) * L + a

    best = np.minimum(i1 * L2 + i2, i2 * L2 + i1)
    for _ in range(3):
        i1, i2 = quarter_turn(i1), quarter_turn(i2)
        best = np.minimum(best, np.minimum(i1 * L2 + i2, i2 * L2 + i1))
    return best


def _selector(idx, size):
    return sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(size, len(idx)))


class PairSet:
    """Frequency pairs ``(k1, k2)`` with ``k3 = -k1-k2``, split into chunks.

    Chunks bound the ``(angles x pairs)`` work arrays; the sparse selectors
    used to scatter cotangents back onto single frequencies are built once
    per chunk and reused across evaluations.
    """

    def __init__(self, n, i1, i2, n_angles):
        self.n = n
        self.i1 = np.asarray(i1).ravel()
        self.i2 = np.asarray(i2).ravel()
        self.i3 = third_index(n, self.i1, self.i2)
        self._step = max(1, _CHUNK_ELEMENTS // max(n_angles, 1))
        self._selectors = {}

    def __len__(self):
        return len(self.i1)

    def slices(self):
        for start in range(0, len(self), self._step):
            yield slice(start, min(len(self), start + self._step))

    def selectors(self, sl):
        """Sparse scatter matrices for one chunk, built once and kept."""
        if sl.start not in self._selectors:
            L2 = (4 * self.n) ** 2
            self._selectors[sl.start] = tuple(_selector(i[sl], L2) for i in (self.i1, self.i2, self.i3))
        return self._selectors[sl.start]


def bispectrum_at(A, pairs, weight):
    """``weight * sum_phi A[phi,k1] A[phi,k2] A[phi,-k1-k2]`` for each pair."""
    out = np.empty(len(pairs), complex)
    for sl in pairs.slices():
        a, b, c = pairs.i1[sl], pairs.i2[sl], pairs.i3[sl]
        out[sl] = np.einsum("fp,fp,fp->p", A[:, a], A[:, b], A[:, c])
    out *= weight
    return out


def fourier_cotangent(A, pairs, cotangent, weight):
    """Cotangent on ``Fhat`` of ``Re sum_p cot_p S3hat_p`` (product rule)."""
    L2 = (4 * pairs.n) ** 2
    H = np.zeros((A.shape[0], L2), complex)
    for sl in pairs.slices():
        s1, s2, s3 = pairs.selectors(sl)
        g = cotangent[sl][None, :]
        Aa, Ab, Ac = A[:, pairs.i1[sl]], A[:, pairs.i2[sl]], A[:, pairs.i3[sl]]
        H += (s1 @ (g * Ab * Ac).T).T
        H += (s2 @ (g * Aa * Ac).T).T
        H += (s3 @ (g * Aa * Ab).T).T
    H *= weight
    return H


def bispectrum_jacobian(A, pairs, weights):
    """Derivatives ``d S3hat_p / d z_v`` for each pair, shape ``(len(pairs), |V|)``.

    The bispectrum is holomorphic in ``z``, so one complex matrix carries the
    full derivative.  Per pair the three product-rule terms are grouped by
    angular frequency, which keeps the cost at one gradient evaluation.
    """
    V = weights._psi_hat.shape[0]
    J = np.empty((len(pairs), V), complex)
    pt = weights.phases.T
    g = weights._group
    for sl in pairs.slices():
        a, b, c = pairs.i1[sl], pairs.i2[sl], pairs.i3[sl]
        Aa, Ab, Ac = A[:, a], A[:, b], A[:, c]
        block = weights._psi_hat[:, a] * (pt @ (Ab * Ac))[g]
        block += weights._psi_hat[:, b] * (pt @ (Aa * Ac))[g]
        block += weights._psi_hat[:, c] * (pt @ (Aa * Ab))[g]
        J[sl] = block.T
    J *= weights.weight
    return J


def s3hat_from_coeffs(z, basis, weights, pairs=None):
    """Bispectrum ``S3hat^z``.

    :param pairs: optional ``(i1, i2)`` flat frequency indices.  When given,
        a vector of values at those pairs is returned; otherwise the full
        ``(4n, 4n, 4n, 4n)`` array.
    """
    _check_weights(basis, weights)
    A = weights.fourier(z)
    n = basis.n
    if pairs is None:
        L = 4 * n
        ps = PairSet(n, *all_pairs(n), weights.N)
        return bispectrum_at(A, ps, weights.weight).reshape(L, L, L, L)
    return bispectrum_at(A, PairSet(n, pairs[0], pairs[1], weights.N), weights.weight)


def s3hat_gradient(z, basis, weights, cotangent, pairs=None):
    """Gradient of ``Re sum_p cotangent_p * S3hat^z_p`` in real parameters.

    ``cotangent`` has the shape of :func:`s3hat_from_coeffs` output for the
    same ``pairs``.  The result is aligned with :meth:`SteerableBasis.to_real`.
    """
    _check_weights(basis, weights)
    n = basis.n
    cot = np.asarray(cotangent, dtype=complex)
    if pairs is None:
        L = 4 * n
        if cot.shape != (L, L, L, L):
            raise ShapeMismatch(f"cotangent shape {cot.shape} != {(L, L, L, L)}")
        i1, i2 = all_pairs(n)
    else:
        i1, i2 = np.asarray(pairs[0]).ravel(), np.asarray(pairs[1]).ravel()
        if cot.shape != i1.shape:
            raise ShapeMismatch(f"cotangent shape {cot.shape} != {i1.shape}")
    A = weights.fourier(z)
    H = fourier_cotangent(A, PairSet(n, i1, i2, weights.N), cot.ravel(), weights.weight)
    R = weights.adjoint(H)
    return np.real(basis.real_map.T @ R)
