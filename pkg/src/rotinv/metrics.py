"""Reconstruction and invariant-estimation error measures."""

from dataclasses import dataclass

import numpy as np

from .basis import check_reality, steer, synthesize
from .errors import BasisMismatch, ShapeMismatch, ZeroReference

GRID_POINTS = 4096
PHI_TOL = 1e-10


@dataclass
class ErrorReport:
    error_recon: float
    best_phi: float
    error_s3: float = float("nan")


def _rotation_objective(z_ref, z_est, basis):
    """Return ``f(phi) = ||F0 - F_est^phi||^2`` as a vectorized callable.

    Both terms are trigonometric polynomials in ``phi``; they are assembled
    from per-frequency images so each evaluation costs ``O(nu_max^2)``.
    """
    F0 = synthesize(z_ref, basis)
    nus = np.arange(-basis.nu_max, basis.nu_max + 1)
    group = basis.nu + basis.nu_max
    G = np.zeros((len(nus),) + F0.shape, complex)
    np.add.at(G, group, np.asarray(z_est)[:, None, None] * basis.psi)
    G = G.reshape(len(nus), -1)
    cross = G @ F0.ravel()
    gram = G @ G.T
    ref = float(np.sum(F0**2))

    def objective(phi):
        e = np.exp(1j * np.multiply.outer(np.atleast_1d(phi), nus))
        norm = np.real(np.einsum("pi,ij,pj->p", e, gram, e))
        xc = np.real(e @ cross)
        return np.maximum(ref + norm - 2 * xc, 0.0)

    return objective, ref


def error_recon(z_ref, z_est, basis):
    """Relative image error minimized over in-plane rotations of the estimate.

    :returns: ``(error, best_phi)`` with ``best_phi`` in ``[0, 2 pi)`` such
        that ``steer(z_est, best_phi)`` is the best-aligned estimate.
    """
    z_ref = np.asarray(z_ref)
    z_est = np.asarray(z_est)
    if z_ref.shape != z_est.shape or z_ref.shape != (len(basis),):
        raise BasisMismatch("coefficient vectors do not match the basis")
    check_reality(z_est, basis)
    objective, ref = _rotation_objective(z_ref, z_est, basis)
    if ref == 0:
        raise ZeroReference("reference image is zero")
    grid = 2 * np.pi * np.arange(GRID_POINTS) / GRID_POINTS
    vals = objective(grid)
    i = int(np.argmin(vals))
    h = 2 * np.pi / GRID_POINTS
    # refine on the images themselves: the expanded objective loses digits
    # to cancellation once the residual is tiny
    F0 = synthesize(z_ref, basis)

    def direct(phi):
        return float(np.sum((F0 - synthesize(steer(z_est, phi, basis), basis)) ** 2))

    phi, best = _golden(direct, grid[i] - h, grid[i] + h, PHI_TOL)
    phi, best = _newton(direct, phi, best, F0, z_est, basis)
    phi = float(np.mod(phi, 2 * np.pi))
    if 2 * np.pi - phi < 10 * PHI_TOL:
        phi = 0.0
    return float(np.sqrt(best / ref)), phi


def _newton(direct, phi, best, F0, z, basis, steps=4):
    """A few Newton steps on the derivative, built from residual images.

    Golden section leaves ``phi`` uncertain at the ``PHI_TOL`` level; the
    derivative formed from the residual itself suffers no cancellation, so
    this reaches the minimizer to rounding.
    """
    i_nu = 1j * basis.nu
    for _ in range(steps):
        zp = steer(z, phi, basis)
        R = F0 - synthesize(zp, basis)
        D1 = synthesize(i_nu * zp, basis)
        D2 = synthesize(i_nu**2 * zp, basis)
        g = -2 * np.sum(R * D1)
        curv = 2 * np.sum(D1 * D1) - 2 * np.sum(R * D2)
        if not curv > 0:
            break
        trial = phi - g / curv
        val = direct(trial)
        if not val < best:
            break
        phi, best = trial, val
    return phi, best


def _golden(f, a, b, tol):
    """Golden-section minimization of a unimodal ``f`` on ``[a, b]``."""
    invphi = (np.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def error_s3(s3_ref, s3_est):
    """Relative Frobenius error ``||ref - est|| / ||ref||``."""
    s3_ref = np.asarray(s3_ref)
    s3_est = np.asarray(s3_est)
    if s3_ref.shape != s3_est.shape:
        raise ShapeMismatch(f"shapes differ: {s3_ref.shape} vs {s3_est.shape}")
    ref = np.linalg.norm(s3_ref)
    if ref == 0:
        raise ZeroReference("reference invariant is zero")
    return float(np.linalg.norm(s3_ref - s3_est) / ref)
