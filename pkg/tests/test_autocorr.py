import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import signal

from rotinv import autocorr
from rotinv.autocorr import (
    A3_RAW,
    FREQUENCY,
    REAL_OFFSETS,
    S3_NORMALIZED,
    InvariantTensor,
    compute_a3,
    debias,
    delta_slices,
    dft_s3,
    estimate_noise_and_mean,
    idft_s3,
)
from rotinv.basis import build_basis
from rotinv.errors import InvalidGamma, ShapeMismatch, SizeMismatch, ValidationError
from rotinv.images import model_coefficients
from rotinv.simulate import Placement, place_targets, render_micrograph, simulate


def _brute_a3(M, n):
    """Sum over pixels for every offset pair, vectorized over pixels only."""
    m = M.shape[0]
    L = 4 * n
    P = np.zeros((m + 2 * L, m + 2 * L))
    P[L : L + m, L : L + m] = M
    out = np.zeros((L, L, L, L))
    for a in range(L):
        for b in range(L):
            s1 = P[L + a - 2 * n : L + a - 2 * n + m, L + b - 2 * n : L + b - 2 * n + m] * M
            for c in range(L):
                for d in range(L):
                    s2 = P[L + c - 2 * n : L + c - 2 * n + m, L + d - 2 * n : L + d - 2 * n + m]
                    out[a, b, c, d] = np.sum(s1 * s2)
    return out / m**2


class TestComputeA3:
    def test_zero(self):
        assert not compute_a3(np.zeros((20, 20)), 2).data.any()

    def test_constant(self):
        a3 = compute_a3(np.full((30, 30), 1.7), 3)
        assert a3.data[6, 6, 6, 6] == pytest.approx(1.7**3, rel=1e-13)

    def test_single_pixel(self):
        M = np.zeros((25, 25))
        M[11, 7] = 1.0
        a3 = compute_a3(M, 2).data
        assert a3[4, 4, 4, 4] == pytest.approx(1 / 25**2, rel=1e-13)
        a3[4, 4, 4, 4] = 0
        assert np.abs(a3).max() < 1e-17

    def test_against_literal_sum(self, rng):
        M = rng.standard_normal((21, 21))
        want = _brute_a3(M, 2)
        for method in ("fft", "direct"):
            got = compute_a3(M, 2, method=method).data
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-13)

    @given(m=st.integers(17, 64), n=st.integers(2, 4), seed=st.integers(0, 2**32 - 1))
    def test_fft_matches_direct(self, m, n, seed):
        if m <= 4 * n:
            return
        M = np.random.default_rng(seed).standard_normal((m, m))
        a = compute_a3(M, n).data
        b = compute_a3(M, n, method="direct").data
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-10

    def test_tiles_do_not_change_result(self, rng):
        M = rng.standard_normal((150, 150))
        a = autocorr._a3_fft(M, 3, tile=32)
        b = autocorr._a3_fft(M, 3, tile=128)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-13 * np.abs(b).max())

    @pytest.mark.invariance
    def test_exact_symmetry(self, rng):
        A = compute_a3(rng.standard_normal((40, 40)), 3).data
        assert np.array_equal(A, A.transpose(2, 3, 0, 1))

    @pytest.mark.invariance
    def test_triple_correlation_symmetry(self, rng):
        n = 3
        L = 4 * n
        A = compute_a3(rng.standard_normal((40, 40)), n).data
        for a in range(1, L):
            for b in range(1, L):
                u = (a - 2 * n, b - 2 * n)
                for c in range(L):
                    for d in range(L):
                        x2 = (c - 2 * n, d - 2 * n)
                        y = (x2[0] - u[0] + 2 * n, x2[1] - u[1] + 2 * n)
                        if 0 <= y[0] < L and 0 <= y[1] < L:
                            assert abs(A[a, b, c, d] - A[L - a, L - b, y[0], y[1]]) < 1e-13

    def test_thread_count_invariance(self, rng):
        M = rng.standard_normal((90, 90))
        a = compute_a3(M, 3, threads=1).data
        for threads in (2, 4, 0):
            assert np.array_equal(compute_a3(M, 3, threads=threads).data, a)

    def test_pass_count_independent_of_content(self, monkeypatch):
        # the number of transforms depends on n only, not on how many targets are present
        calls = []
        real = autocorr.sfft.rfft2
        monkeypatch.setattr(autocorr.sfft, "rfft2", lambda *a, **k: calls.append(1) or real(*a, **k))
        b = build_basis(3, count=10)
        z = b.random_coefficients(np.random.default_rng(0))
        counts = []
        for p in (0, 5, 20):
            calls.clear()
            compute_a3(simulate(z, b, 160, 0.1, 1, p=p), 3)
            counts.append(len(calls))
        assert counts[0] == counts[1] == counts[2] == len(autocorr._offset_plan(3)) + 1

    def test_size_mismatch(self):
        with pytest.raises(SizeMismatch):
            compute_a3(np.zeros((16, 16)), 4)
        with pytest.raises(SizeMismatch):
            compute_a3(np.zeros((30, 20)), 2)

    def test_metadata(self, rng):
        a3 = compute_a3(rng.standard_normal((30, 30)), 2)
        assert (a3.space, a3.scale, a3.meta["m"]) == (REAL_OFFSETS, A3_RAW, 30)


class TestNoiseAndMean:
    def test_zero(self):
        assert estimate_noise_and_mean(np.zeros((8, 8))) == (0.0, 0.0)

    def test_constant(self):
        s2, mu = estimate_noise_and_mean(np.full((8, 8), 3.0))
        assert s2 == 0.0 and mu == 3.0

    def test_pure_noise_variance(self):
        est = [estimate_noise_and_mean(np.random.default_rng(s).standard_normal((512, 512)))[0] for s in range(50)]
        assert np.all(np.abs(np.array(est) - 1) < 0.02)

    def test_unbiased_variance(self, rng):
        x = rng.standard_normal((3, 3))
        assert estimate_noise_and_mean(x)[0] == pytest.approx(np.var(x, ddof=1))


class TestDebias:
    def _a3(self, rng, n=2):
        return compute_a3(rng.standard_normal((30, 30)), n)

    def test_no_noise_is_scaling(self, rng):
        a3 = self._a3(rng)
        out = debias(a3, 0.0, 0.7, 0.01)
        np.testing.assert_allclose(out.data, 2 * np.pi / 0.01 * a3.data, rtol=1e-15)
        assert out.scale == S3_NORMALIZED

    def test_off_delta_entries_only_scaled(self, rng):
        a3 = self._a3(rng)
        out = debias(a3, 1.3, 0.7, 0.02)
        # x1 = (1, 0), x2 = (0, -1): neither offset zero and x1 != x2
        idx = (5, 4, 4, 3)
        assert out.data[idx] == pytest.approx(2 * np.pi / 0.02 * a3.data[idx], rel=1e-14)

    def test_delta_slices(self):
        d = delta_slices(2).reshape(64, 64)
        o = 4 * 8 + 4
        assert d[o, o] == 3
        assert d[o, 0] == 1 and d[0, o] == 1 and d[5, 5] == 1 and d[5, 6] == 0

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_invalid_gamma(self, rng, gamma):
        with pytest.raises(InvalidGamma):
            debias(self._a3(rng), 1.0, 1.0, gamma)

    def test_requires_offsets(self, rng):
        with pytest.raises(ValidationError):
            debias(dft_s3(self._a3(rng)), 1.0, 1.0, 1.0)

    def test_unbiased_at_delta_slices(self):
        # fixed clean micrograph plus 200 noise fields; only the three delta
        # slices carry noise bias, and each is one FFT correlation.  Targets
        # keep 2n pixels from the border so that shifted windows of the clean
        # frame all have the same mean (zero extension otherwise biases the
        # noise term by O(n / m)).  The plug-in pixel variance also carries
        # var(clean), a bias of (2 pi / gamma) var(clean) mean(clean) per entry
        # that is small next to the noise here.
        n, m, sigma = 4, 512, 2.0
        z0, b = model_coefficients(n, basis=build_basis(n, count=30))
        inner = place_targets(m - 4 * n, n, 60, np.random.default_rng(3))
        angles = np.random.default_rng(4).uniform(0, 2 * np.pi, len(inner))
        placements = [Placement((r + 2 * n, c + 2 * n), a) for (r, c), a in zip(inner, angles)]
        C = render_micrograph(z0, b, placements, 0.0, m).pixels
        gamma = len(placements) / m**2
        L = 4 * n

        def slices(M):
            # A3(0, x2) = A3(x2, 0) = A3(x2, x2) = (1/m^2) sum_x M(x)^2 M(x + x2)
            corr = signal.correlate(np.pad(M, 2 * n), M**2, mode="valid", method="fft")
            return corr[:L, :L] / m**2

        clean_vals = slices(C)
        # the clean A3 on the slices is in the limit (gamma / 2 pi) S3 there
        target = 2 * np.pi / gamma * clean_vals
        samples = []
        rng = np.random.default_rng(11)
        for _ in range(200):
            M = C + sigma * rng.standard_normal((m, m))
            s2, mu = estimate_noise_and_mean(M)
            a3 = slices(M)
            # all three deltas fire at x2 = 0, one fires elsewhere on the slice
            bias = s2 * mu * np.where(np.arange(L * L).reshape(L, L) == 2 * n * L + 2 * n, 3, 1)
            samples.append(2 * np.pi / gamma * (a3 - bias))
        samples = np.array(samples)
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
        # the slice-wide sum and the origin entry sit within four standard errors
        total_se = samples.sum(axis=(1, 2)).std(ddof=1) / np.sqrt(len(samples))
        assert abs(mean.sum() - target.sum()) <= 4 * total_se
        assert abs(mean[2 * n, 2 * n] - target[2 * n, 2 * n]) <= 4 * se[2 * n, 2 * n]

    def test_slices_helper_matches_compute_a3(self, rng):
        n, m = 2, 30
        M = rng.standard_normal((m, m))
        A = compute_a3(M, n).data
        corr = signal.correlate(np.pad(M, 2 * n), M**2, mode="valid", method="direct")[: 4 * n, : 4 * n] / m**2
        np.testing.assert_allclose(A[2 * n, 2 * n], corr, atol=1e-14)
        np.testing.assert_allclose(A[:, :, 2 * n, 2 * n], corr, atol=1e-14)
        # A3(x, x) = A3(0, -x)
        diag = A.reshape(64, 64).diagonal().reshape(8, 8)
        np.testing.assert_allclose(diag[1:, 1:], corr[:0:-1, :0:-1], atol=1e-14)


class TestDFT:
    def _tensor(self, data, n=2):
        return InvariantTensor(n=n, data=data)

    def test_delta_gives_constant(self):
        d = np.zeros((8,) * 4)
        d[4, 4, 4, 4] = 2.5
        out = dft_s3(self._tensor(d))
        assert out.space == FREQUENCY
        np.testing.assert_allclose(out.data, 2.5, atol=1e-15)

    def test_hermitian(self, rng):
        out = dft_s3(self._tensor(rng.standard_normal((8,) * 4))).data
        neg = (-(np.arange(8) - 4)) % 8
        neg = (neg + 4) % 8
        np.testing.assert_allclose(out[np.ix_(neg, neg, neg, neg)], np.conj(out), atol=1e-12)

    def test_parseval(self, rng):
        x = rng.standard_normal((8,) * 4)
        X = dft_s3(self._tensor(x)).data
        assert np.sum(x**2) == pytest.approx(np.sum(np.abs(X) ** 2) / 8**4, rel=1e-10)

    def test_round_trip(self, rng):
        x = rng.standard_normal((8,) * 4)
        back = idft_s3(dft_s3(self._tensor(x))).data
        np.testing.assert_allclose(back, x, atol=1e-12)

    def test_matches_explicit_sum(self, rng):
        n = 1
        x = rng.standard_normal((4,) * 4)
        X = dft_s3(self._tensor(x, n=1)).data
        r = np.arange(-2, 2)
        k = (1, -2, 0, 1)
        phase = np.exp(
            -2j
            * np.pi
            * (
                k[0] * r[:, None, None, None]
                + k[1] * r[None, :, None, None]
                + k[2] * r[None, None, :, None]
                + k[3] * r[None, None, None, :]
            )
            / 4
        )
        assert X[3, 0, 2, 3] == pytest.approx(np.sum(x * phase), abs=1e-12)

    def test_domain_checks(self, rng):
        t = self._tensor(rng.standard_normal((8,) * 4))
        with pytest.raises(ValidationError):
            idft_s3(t)
        with pytest.raises(ValidationError):
            dft_s3(dft_s3(t))


class TestInvariantTensor:
    def test_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            InvariantTensor(n=2, data=np.zeros((8, 8, 8)))

    def test_enum_checked(self):
        with pytest.raises(ValidationError):
            InvariantTensor(n=1, data=np.zeros((4,) * 4), space="pixels")
        with pytest.raises(ValidationError):
            InvariantTensor(n=1, data=np.zeros((4,) * 4), scale="raw")
