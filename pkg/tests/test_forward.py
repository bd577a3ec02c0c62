import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rotinv.autocorr import InvariantTensor, dft_s3
from rotinv.basis import build_basis, steer, synthesize
from rotinv.errors import BasisMismatch, ShapeMismatch
from rotinv.forward import (
    PairSet,
    PrecomputedWeights,
    bispectrum_jacobian,
    default_quadrature,
    s1,
    s3_direct,
    s3hat_from_coeffs,
    s3hat_gradient,
    triple_correlation,
)
from rotinv.grid import centered_dft, grid_coords


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def _brute_triple(image, n):
    """Literal four-fold loop over pixels and offsets."""
    L = 4 * n
    nz = [tuple(p) for p in np.argwhere(image != 0)]
    T = np.zeros((L, L, L, L))

    def at(i, j):
        return image[i, j] if 0 <= i < L and 0 <= j < L else 0.0

    for a in range(L):
        for b in range(L):
            for c in range(L):
                for d in range(L):
                    T[a, b, c, d] = sum(
                        image[i, j] * at(i + a - 2 * n, j + b - 2 * n) * at(i + c - 2 * n, j + d - 2 * n) for i, j in nz
                    )
    return T


def _bispectrum_loop(z, basis, N):
    """Pointwise bispectrum average over steered DFTs, one frequency pair at a time."""
    L = 4 * basis.n
    out = np.zeros((L, L, L, L), complex)
    for phi in 2 * np.pi * np.arange(N) / N:
        Fh = centered_dft(synthesize(steer(z, phi, basis), basis))
        for a in range(L):
            for b in range(L):
                c = (6 * basis.n - a - np.arange(L)[:, None]) % L
                d = (6 * basis.n - b - np.arange(L)[None, :]) % L
                out[a, b] += Fh[a, b] * Fh * Fh[c, d]
    return out * 2 * np.pi / N


class TestS1:
    def test_zero(self, basis_nu2):
        assert s1(np.zeros(len(basis_nu2), complex), basis_nu2) == 0

    def test_nonradial_only_vanishes(self, basis_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        z[basis_nu2.nu == 0] = 0
        assert abs(s1(z, basis_nu2)) < 1e-12

    @pytest.mark.parametrize("count", [6, 30, 100])
    def test_quadrature_oracle(self, count, rng):
        b = build_basis(8, count=count)
        z = b.random_coefficients(rng)
        N = 2 * b.nu_max + 2
        oracle = 2 * np.pi / N * sum(synthesize(steer(z, phi, b), b).sum() for phi in 2 * np.pi * np.arange(N) / N)
        assert abs(s1(z, b) - oracle) <= 1e-12 * max(1.0, abs(oracle))

    def test_radial_image_equals_pixel_sum(self, basis_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        z[basis_nu2.nu != 0] = 0
        assert s1(z, basis_nu2) == pytest.approx(2 * np.pi * synthesize(z, basis_nu2).sum(), rel=1e-12)


class TestTripleCorrelation:
    def test_against_literal_loop(self, rng):
        n = 2
        img = np.zeros((8, 8))
        img[3:6, 2:6] = rng.standard_normal((3, 4))
        np.testing.assert_allclose(triple_correlation(img, n), _brute_triple(img, n), atol=1e-12)

    def test_zero_image(self):
        assert not triple_correlation(np.zeros((16, 16)), 4).any()


class TestS3Direct:
    def test_zero(self, basis_nu2):
        assert not s3_direct(np.zeros(len(basis_nu2), complex), basis_nu2).any()

    def test_radial_unit(self, basis_nu2):
        z = np.zeros(len(basis_nu2), complex)
        z[0] = 1
        expect = 2 * np.pi * triple_correlation(synthesize(z, basis_nu2), 4)
        np.testing.assert_allclose(s3_direct(z, basis_nu2), expect, rtol=1e-13, atol=1e-13 * np.abs(expect).max())

    def test_quadrature_doubling(self, basis_nu3, rng):
        z = basis_nu3.random_coefficients(rng)
        a = s3_direct(z, basis_nu3)
        b = s3_direct(z, basis_nu3, N=12 * basis_nu3.nu_max)
        assert np.abs(a - b).max() <= 1e-12 * np.abs(a).max()

    @pytest.mark.invariance
    def test_symmetries(self, basis_nu3, rng):
        n = 4
        S = s3_direct(basis_nu3.random_coefficients(rng), basis_nu3)
        np.testing.assert_allclose(S, S.transpose(2, 3, 0, 1), rtol=0, atol=1e-13 * np.abs(S).max())
        # S(x1, x2) = S(-x1, x2 - x1) wherever both sides lie on the grid
        x1, x2 = grid_coords(n)
        L = 4 * n
        checked = 0
        for a in range(L):
            for b in range(L):
                na, nb = -(a - 2 * n) + 2 * n, -(b - 2 * n) + 2 * n
                if not (0 <= na < L and 0 <= nb < L):
                    continue
                c = x1 - (a - 2 * n) + 2 * n
                d = x2 - (b - 2 * n) + 2 * n
                ok = (c >= 0) & (c < L) & (d >= 0) & (d < L)
                np.testing.assert_allclose(S[na, nb][c[ok], d[ok]], S[a, b][ok], atol=1e-12 * np.abs(S).max())
                checked += ok.sum()
        assert checked > L**4 // 4


class TestBispectrum:
    def test_identity_with_dft(self, basis_nu3, rng):
        w = PrecomputedWeights(basis_nu3)
        z = basis_nu3.random_coefficients(rng)
        S = InvariantTensor(n=4, data=s3_direct(z, basis_nu3))
        assert _rel(s3hat_from_coeffs(z, basis_nu3, w), dft_s3(S).data) < 1e-10

    def test_against_pointwise_loop(self, basis_nu2, weights_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        want = _bispectrum_loop(z, basis_nu2, weights_nu2.N)
        assert _rel(s3hat_from_coeffs(z, basis_nu2, weights_nu2), want) < 1e-12

    def test_zero(self, basis_nu2, weights_nu2):
        assert not s3hat_from_coeffs(np.zeros(len(basis_nu2), complex), basis_nu2, weights_nu2).any()

    @pytest.mark.invariance
    @given(phi=st.floats(0, 2 * np.pi), seed=st.integers(0, 2**32 - 1))
    def test_rotation_invariance(self, basis_nu3, phi, seed):
        w = PrecomputedWeights(basis_nu3)
        z = basis_nu3.random_coefficients(np.random.default_rng(seed))
        a = s3hat_from_coeffs(z, basis_nu3, w)
        assert _rel(s3hat_from_coeffs(steer(z, phi, basis_nu3), basis_nu3, w), a) <= 1e-10

    @pytest.mark.invariance
    @pytest.mark.parametrize("c", [-1.0, 2.0, 0.5])
    def test_homogeneity(self, basis_nu3, rng, c):
        w = PrecomputedWeights(basis_nu3)
        z = basis_nu3.random_coefficients(rng)
        a = s3hat_from_coeffs(z, basis_nu3, w)
        b = s3hat_from_coeffs(c * z, basis_nu3, w)
        # powers of two and sign flips scale every floating-point product exactly
        assert np.array_equal(b, c**3 * a)

    @pytest.mark.invariance
    def test_hermitian(self, basis_nu3, rng):
        w = PrecomputedWeights(basis_nu3)
        S = s3hat_from_coeffs(basis_nu3.random_coefficients(rng), basis_nu3, w)
        L = 16
        neg = (-(np.arange(L) - 8)) % L
        neg = (neg + 8) % L
        flipped = S[np.ix_(neg, neg, neg, neg)]
        np.testing.assert_allclose(flipped, np.conj(S), atol=1e-12 * np.abs(S).max())

    def test_quadrature_orders_agree(self, basis_nu3, rng):
        z = basis_nu3.random_coefficients(rng)
        a = s3hat_from_coeffs(z, basis_nu3, PrecomputedWeights(basis_nu3))
        for N in (3 * basis_nu3.nu_max + 1, 12 * basis_nu3.nu_max, 6 * basis_nu3.nu_max + 5):
            b = s3hat_from_coeffs(z, basis_nu3, PrecomputedWeights(basis_nu3, N))
            assert _rel(b, a) <= 1e-12

    def test_undersampled_quadrature_differs(self, basis_nu3, rng):
        # below the exactness threshold the sum aliases
        z = basis_nu3.random_coefficients(rng)
        a = s3hat_from_coeffs(z, basis_nu3, PrecomputedWeights(basis_nu3))
        b = s3hat_from_coeffs(z, basis_nu3, PrecomputedWeights(basis_nu3, basis_nu3.nu_max))
        assert _rel(b, a) > 1e-6

    def test_pairs_subset(self, basis_nu3, rng):
        w = PrecomputedWeights(basis_nu3)
        z = basis_nu3.random_coefficients(rng)
        full = s3hat_from_coeffs(z, basis_nu3, w).reshape(256, 256)
        i1, i2 = rng.integers(0, 256, 40), rng.integers(0, 256, 40)
        np.testing.assert_allclose(s3hat_from_coeffs(z, basis_nu3, w, (i1, i2)), full[i1, i2], rtol=1e-13, atol=1e-13)

    def test_basis_mismatch(self, basis_nu2, basis_nu3, rng):
        w = PrecomputedWeights(basis_nu3)
        with pytest.raises(BasisMismatch):
            s3hat_from_coeffs(np.zeros(len(basis_nu2), complex), basis_nu2, w)

    def test_default_quadrature(self, basis_8):
        assert PrecomputedWeights(basis_8).N == 6 * basis_8.nu_max == default_quadrature(basis_8.nu_max)


def _fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestGradient:
    def test_zero_z(self, basis_nu2, weights_nu2, rng):
        cot = rng.standard_normal((16,) * 4)
        g = s3hat_gradient(np.zeros(len(basis_nu2), complex), basis_nu2, weights_nu2, cot)
        assert not g.any()

    def test_zero_cotangent(self, basis_nu2, weights_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        assert not s3hat_gradient(z, basis_nu2, weights_nu2, np.zeros((16,) * 4)).any()

    @pytest.mark.parametrize("seed", range(3))
    def test_finite_differences(self, basis_nu2, weights_nu2, seed):
        rng = np.random.default_rng(seed)
        z = basis_nu2.random_coefficients(rng)
        cot = rng.standard_normal((16,) * 4) + 1j * rng.standard_normal((16,) * 4)

        def f(x):
            return np.real(np.sum(cot * s3hat_from_coeffs(basis_nu2.from_real(x), basis_nu2, weights_nu2)))

        g = s3hat_gradient(z, basis_nu2, weights_nu2, cot)
        fd = _fd_gradient(f, basis_nu2.to_real(z))
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) <= 1e-5

    def test_pairs_gradient_matches_full(self, basis_nu2, weights_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        i1, i2 = rng.integers(0, 256, 30), rng.integers(0, 256, 30)
        cot = rng.standard_normal(30) + 1j * rng.standard_normal(30)
        full = np.zeros((256, 256), complex)
        np.add.at(full, (i1, i2), cot)
        a = s3hat_gradient(z, basis_nu2, weights_nu2, cot, (i1, i2))
        b = s3hat_gradient(z, basis_nu2, weights_nu2, full.reshape((16,) * 4))
        np.testing.assert_allclose(a, b, rtol=1e-11, atol=1e-12 * np.abs(b).max())

    def test_shape_mismatch(self, basis_nu2, weights_nu2, rng):
        z = basis_nu2.random_coefficients(rng)
        with pytest.raises(ShapeMismatch):
            s3hat_gradient(z, basis_nu2, weights_nu2, np.zeros((16, 16)))
        with pytest.raises(ShapeMismatch):
            s3hat_gradient(z, basis_nu2, weights_nu2, np.zeros(3), (np.arange(4), np.arange(4)))

    def test_jacobian_matches_gradient(self, basis_nu3, rng):
        w = PrecomputedWeights(basis_nu3)
        z = basis_nu3.random_coefficients(rng)
        i1, i2 = rng.integers(0, 256, 60), rng.integers(0, 256, 60)
        cot = rng.standard_normal(60) + 1j * rng.standard_normal(60)
        J = bispectrum_jacobian(w.fourier(z), PairSet(4, i1, i2, w.N), w) @ basis_nu3.real_map
        np.testing.assert_allclose(np.real(cot @ J), s3hat_gradient(z, basis_nu3, w, cot, (i1, i2)), rtol=1e-10)


def _timed_eval(n, bandlimit):
    import time

    b = build_basis(n, bandlimit=bandlimit)
    w = PrecomputedWeights(b)
    z = b.random_coefficients(np.random.default_rng(0))
    s3hat_from_coeffs(z, b, w)
    best = np.inf
    for _ in range(3):
        t = time.perf_counter()
        s3hat_from_coeffs(z, b, w)
        best = min(best, time.perf_counter() - t)
    return best, n**4 * b.nu_max


class TestCostScaling:
    # wall time should track n^4 nu_max within a factor of two

    def test_doubling_n(self):
        t1, ops1 = _timed_eval(4, 9.0)
        t2, ops2 = _timed_eval(8, 9.0)
        assert 0.5 <= (t2 / t1) / (ops2 / ops1) <= 2.0

    def test_doubling_nu_max(self):
        t1, ops1 = _timed_eval(6, 6.5)
        t2, ops2 = _timed_eval(6, 10.0)
        assert ops2 / ops1 == 2
        assert 0.5 <= (t2 / t1) / (ops2 / ops1) <= 2.0
