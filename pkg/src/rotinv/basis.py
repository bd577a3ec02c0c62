"""Steerable basis of Dirichlet Laplacian eigenfunctions on the unit disk.

The eigenfunctions are ``psi_{nu,q}(r, theta) = J_nu(lambda_{nu,q} r) exp(i nu theta)``
with ``lambda_{nu,q}`` the q-th positive root of ``J_nu``.  Images are sampled
at ``x / n`` on the centred ``4n x 4n`` grid (see :mod:`rotinv.grid`).

Coefficient vectors are complex arrays aligned with ``SteerableBasis.nu``.
Real images satisfy ``z[-nu, q] = (-1)^nu conj(z[nu, q])``; the optimizer
works with the equivalent real vector returned by
:meth:`SteerableBasis.to_real`.
"""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import InvalidSelection, IterationFailure, RankDeficiency, RealityViolation
from .grid import centered_dft, grid_coords, support_mask

logger = logging.getLogger(__name__)

MAX_BASIS_SIZE = 20000
REALITY_TOL = 1e-10
MAX_CONDITION = 1e12


def bessel_j(nu, x):
    """Bessel function of the first kind ``J_nu(x)`` for integer ``nu``."""
    return special.jv(nu, x)


def _bessel_j_prime(nu, x):
    return 0.5 * (special.jv(nu - 1, x) - special.jv(nu + 1, x))


def _mcmahon(nu, q):
    beta = (q + 0.5 * nu - 0.25) * np.pi
    mu = 4.0 * nu * nu
    return beta - (mu - 1) / (8 * beta) - 4 * (mu - 1) * (7 * mu - 31) / (3 * (8 * beta) ** 3)


def _refine_root(nu, lo, hi, guess, tol=1e-15, maxiter=200):
    # safeguarded Newton: fall back to bisection when a step leaves the bracket
    f_lo = bessel_j(nu, lo)
    x = guess if lo < guess < hi else 0.5 * (lo + hi)
    for _ in range(maxiter):
        fx = bessel_j(nu, x)
        if fx == 0.0:
            return x
        if np.sign(fx) == np.sign(f_lo):
            lo, f_lo = x, fx
        else:
            hi = x
        d = _bessel_j_prime(nu, x)
        step = fx / d if d != 0 else np.inf
        x_new = x - step
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= tol * max(1.0, abs(x)) or hi - lo <= tol * max(1.0, abs(x)):
            x = x_new
            break
        x = x_new
    if abs(bessel_j(nu, x)) >= 1e-12:
        raise IterationFailure(f"root of J_{nu} in [{lo}, {hi}] did not converge")
    return x


@lru_cache(maxsize=256)
def _bessel_roots_cached(nu, count):
    # zeros of J_nu are simple and spaced further apart than 2.9, so a unit
    # scan step cannot step over a pair of them; J_nu has no zeros below nu
    roots = []
    x0 = max(float(nu), 0.5)
    block = max(64, count * 4)
    while len(roots) < count:
        xs = x0 + np.arange(block + 1, dtype=float)
        fs = bessel_j(nu, xs)
        changes = np.nonzero(np.sign(fs[:-1]) * np.sign(fs[1:]) < 0)[0]
        for i in changes:
            q = len(roots) + 1
            roots.append(_refine_root(nu, xs[i], xs[i + 1], _mcmahon(nu, q)))
            if len(roots) == count:
                break
        x0 = xs[-1]
    return np.array(roots)


def bessel_roots(nu, count):
    """First ``count`` positive roots of ``J_nu``, ascending."""
    if count < 1:
        raise InvalidSelection("count must be >= 1")
    return _bessel_roots_cached(abs(int(nu)), int(count)).copy()


def bessel_root(nu, q):
    """The q-th positive root ``lambda_{nu,q}`` of ``J_nu``."""
    if q < 1:
        raise InvalidSelection("q must be >= 1")
    return float(_bessel_roots_cached(abs(int(nu)), int(q))[-1])


class BasisIndex(NamedTuple):
    nu: int
    q: int
    lam: float


def _roots_below(lam_max):
    """All ``(lam, nu, q)`` with ``lam <= lam_max``, for nu of both signs."""
    out = []
    nu = 0
    while True:
        if bessel_root(nu, 1) > lam_max:
            break
        count = 1
        while True:
            roots = bessel_roots(nu, count)
            if roots[-1] > lam_max:
                break
            count *= 2
        roots = roots[roots <= lam_max]
        for q, lam in enumerate(roots, start=1):
            out.append(BasisIndex(nu, q, float(lam)))
            if nu > 0:
                out.append(BasisIndex(-nu, q, float(lam)))
        nu += 1
    return out


def _canonical_key(idx):
    return (idx.lam, abs(idx.nu), idx.nu < 0, idx.q)


@dataclass(frozen=True, eq=False)
class SteerableBasis:
    """Sampled eigenfunctions and their DFTs.

    ``psi`` and ``psi_hat`` have shape ``(len(basis), 4n, 4n)``.
    """

    n: int
    lambda_max: float
    nu_max: int
    nu: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    psi: np.ndarray
    psi_hat: np.ndarray

    def __len__(self):
        return len(self.nu)

    @property
    def indices(self):
        return [BasisIndex(int(a), int(b), float(c)) for a, b, c in zip(self.nu, self.q, self.lam)]

    @cached_property
    def partner(self):
        """Position of ``(-nu, q)`` for every entry."""
        lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(self.nu, self.q))}
        return np.array([lookup[(-int(a), int(b))] for a, b in zip(self.nu, self.q)])

    @cached_property
    def real_map(self):
        """Complex matrix ``T`` with ``z = T @ x`` for real parameters ``x``.

        ``nu == 0`` entries own one real parameter; each ``nu > 0`` entry owns
        two (real and imaginary part) and fixes its ``-nu`` partner.
        """
        cols = []
        for i, (nu, partner) in enumerate(zip(self.nu, self.partner)):
            if nu == 0:
                c = np.zeros(len(self), complex)
                c[i] = 1.0
                cols.append(c)
            elif nu > 0:
                sign = (-1.0) ** nu
                c = np.zeros(len(self), complex)
                c[i] = 1.0
                c[partner] = sign
                cols.append(c)
                c = np.zeros(len(self), complex)
                c[i] = 1j
                c[partner] = -1j * sign
                cols.append(c)
        return np.array(cols).T

    @property
    def real_dim(self):
        return self.real_map.shape[1]

    def to_real(self, z):
        z = np.asarray(z, dtype=complex)
        check_reality(z, self)
        out = []
        for i, nu in enumerate(self.nu):
            if nu == 0:
                out.append(z[i].real)
            elif nu > 0:
                out.extend((z[i].real, z[i].imag))
        return np.array(out)

    def from_real(self, x):
        return self.real_map @ np.asarray(x, dtype=float)

    def random_coefficients(self, rng, scale=1.0):
        """Gaussian coefficients of a real image."""
        return self.from_real(scale * rng.standard_normal(self.real_dim))

    @cached_property
    def _real_dictionary(self):
        mask = support_mask(self.n)
        cols = np.tensordot(self.real_map.T, self.psi, axes=1)
        D = cols.real[:, mask].T
        u, s, vt = np.linalg.svd(D, full_matrices=False)
        return mask, u, s, vt

    @property
    def condition_number(self):
        s = self._real_dictionary[2]
        if len(s) < self.real_dim or s[-1] == 0:
            # fewer support pixels than parameters
            return np.inf
        return float(s[0] / s[-1])

    def same_as(self, other):
        return (
            self is other
            or (
                self.n == other.n
                and np.array_equal(self.nu, other.nu)
                and np.array_equal(self.q, other.q)
            )
        )


def _sample(n, nu, lam):
    x1, x2 = grid_coords(n)
    r = np.hypot(x1, x2) / n
    theta = np.arctan2(x2, x1)
    inside = r < 1
    vals = np.where(inside, bessel_j(nu, lam * np.where(inside, r, 0.0)), 0.0)
    return vals * np.exp(1j * nu * theta)


def build_basis(n, count=None, bandlimit=None):
    """Build the sampled steerable basis.

    Exactly one of ``count`` (first K eigenfunctions in ascending eigenvalue
    order) or ``bandlimit`` (all eigenfunctions with root ``<= bandlimit``)
    must be given.

    In count mode a cut that separates ``(nu, q)`` from ``(-nu, q)`` is
    extended by the missing partner so real images stay representable.
    """
    if n < 2:
        raise InvalidSelection("n must be >= 2")
    if (count is None) == (bandlimit is None):
        raise InvalidSelection("give exactly one of count or bandlimit")
    if count is not None:
        count = int(count)
        if count < 1:
            raise InvalidSelection("count must be >= 1")
        if count > MAX_BASIS_SIZE:
            raise InvalidSelection(f"count {count} exceeds the available {MAX_BASIS_SIZE} roots")
        lam_try = 2.0 * np.sqrt(count) + 10.0
        while True:
            cands = sorted(_roots_below(lam_try), key=_canonical_key)
            if len(cands) >= count + 1:
                break
            lam_try *= 1.5
        chosen = cands[:count]
        last = chosen[-1]
        if last.nu > 0:
            chosen.append(cands[count])
            logger.warning(
                "count %d splits the pair nu=+-%d, q=%d; including the partner", count, last.nu, last.q
            )
        lambda_max = chosen[-1].lam
    else:
        lambda_max = float(bandlimit)
        if lambda_max < bessel_root(0, 1):
            raise InvalidSelection("bandlimit is below the first root of J_0")
        chosen = sorted(_roots_below(lambda_max), key=_canonical_key)
    nu = np.array([c.nu for c in chosen], dtype=int)
    q = np.array([c.q for c in chosen], dtype=int)
    lam = np.array([c.lam for c in chosen])
    psi = np.array([_sample(n, a, c) for a, c in zip(nu, lam)])
    psi_hat = centered_dft(psi)
    for arr in (nu, q, lam, psi, psi_hat):
        arr.setflags(write=False)
    return SteerableBasis(
        n=int(n),
        lambda_max=float(lambda_max),
        nu_max=int(np.abs(nu).max()),
        nu=nu,
        q=q,
        lam=lam,
        psi=psi,
        psi_hat=psi_hat,
    )


def check_reality(z, basis, tol=REALITY_TOL):
    z = np.asarray(z)
    if z.shape != (len(basis),):
        raise RealityViolation(f"coefficient vector has shape {z.shape}, expected ({len(basis)},)")
    expected = (-1.0) ** np.abs(basis.nu) * np.conj(z[basis.partner])
    scale = max(1.0, float(np.abs(z).max(initial=0.0)))
    err = float(np.abs(z - expected).max(initial=0.0))
    if err > tol * scale:
        raise RealityViolation(f"coefficients violate the real-image constraint by {err:.3e}")


def steer(z, phi, basis):
    """Rotate the represented image: multiply each coefficient by ``exp(i nu phi)``."""
    # reducing first makes whole turns exact
    phi = np.mod(phi, 2 * np.pi)
    return np.asarray(z) * np.exp(1j * basis.nu * phi)


def synthesize(z, basis):
    """Real image ``sum_v z_v Psi_v`` on the ``4n x 4n`` grid."""
    check_reality(z, basis)
    return np.tensordot(np.asarray(z, dtype=complex), basis.psi, axes=1).real


def expand(image, basis):
    """Least-squares coefficients of ``image`` in the sampled basis.

    Pixels outside the disk ``|x| < n`` are ignored (the basis vanishes
    there).  Raises :class:`RankDeficiency` when the sampled dictionary is
    too ill-conditioned to separate the requested eigenfunctions.
    """
    if basis.condition_number > MAX_CONDITION:
        raise RankDeficiency(
            f"sampled dictionary has condition number {basis.condition_number:.3e}; "
            f"too many eigenfunctions for n={basis.n}"
        )
    mask, u, s, vt = basis._real_dictionary
    b = np.asarray(image, dtype=float)[mask]
    x = vt.T @ ((u.T @ b) / s)
    return basis.from_real(x)
