"""Binned least-squares recovery of coefficients from a target bispectrum.

Frequency pairs ``(k1, k2)`` are grouped by ``(|k1|, |k2|, angle(k1, k2))``.
The cost is

    f(z) = sum_j | sum_{(k1,k2) in bin j} S3hat^z(k1,k2) - S3hat*(k1,k2) |^2,

minimized with BFGS from several random starts, each optionally polished by
Levenberg-Marquardt on the residual vector.  In one-per-bin mode each bin
contributes only its representative pair, which is adequate when the target
is noiseless and far cheaper.
"""

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import optimize, sparse

from .errors import DegenerateAngle, SchemeMismatch, ValidationError
from .forward import (
    PairSet,
    PrecomputedWeights,
    bispectrum_at,
    bispectrum_jacobian,
    fourier_cotangent,
    orbit_representatives,
)

logger = logging.getLogger(__name__)

DEFAULT_B1 = 1.0
DEFAULT_B2 = 16 / np.pi
# guards floor() against round-off at exact bin edges, e.g. theta = pi/2
_EDGE_EPS = 1e-9


def _angle(k1, k2, signed):
    cross = k1[..., 0] * k2[..., 1] - k1[..., 1] * k2[..., 0]
    dot = k1[..., 0] * k2[..., 0] + k1[..., 1] * k2[..., 1]
    if signed:
        return np.mod(np.arctan2(cross, dot), 2 * np.pi)
    return np.arctan2(np.abs(cross), dot)


def bin_map(k1, k2, b1, b2, signed=False):
    """Bin key ``(floor(b1|k1|), floor(b1|k2|), floor(b2 theta))``.

    ``theta`` is the unsigned angle in ``[0, pi]`` between the two vectors, or
    the counter-clockwise angle from ``k1`` to ``k2`` in ``[0, 2 pi)`` when
    ``signed`` is set.  The angular index is not clamped here.
    """
    if b1 <= 0 or b2 <= 0:
        raise ValidationError("bin scales must be positive")
    k1 = np.asarray(k1, dtype=float)
    k2 = np.asarray(k2, dtype=float)
    if not k1.any() or not k2.any():
        raise DegenerateAngle("angle undefined for a zero frequency")
    r1 = int(np.floor(b1 * np.hypot(*k1) + _EDGE_EPS))
    r2 = int(np.floor(b1 * np.hypot(*k2) + _EDGE_EPS))
    t = int(np.floor(b2 * _angle(k1, k2, signed) + _EDGE_EPS))
    return r1, r2, t


@dataclass(frozen=True, eq=False)
class BinningScheme:
    """Partition of all frequency pairs into bins.

    ``keys[j]`` is the key of bin ``j``; degenerate bins (a zero frequency)
    carry angular index ``-1``.  ``pair_bin`` maps every flat pair index
    ``i1 * (4n)^2 + i2`` to its bin and ``representative[j]`` is the smallest
    flat pair index in bin ``j``.
    """

    n: int
    b1: float
    b2: float
    signed: bool
    one_per_bin: bool
    include_degenerate: bool
    keys: np.ndarray
    pair_bin: np.ndarray
    representative: np.ndarray
    sizes: np.ndarray

    @property
    def n_bins(self):
        return len(self.keys)

    @property
    def degenerate(self):
        return self.keys[:, 2] < 0

    @property
    def active(self):
        """Indices of bins that enter the cost."""
        if self.include_degenerate:
            return np.arange(self.n_bins)
        return np.nonzero(~self.degenerate)[0]

    def matches(self, other):
        return (self.n, self.b1, self.b2, self.signed, self.one_per_bin, self.include_degenerate) == (
            other.n,
            other.b1,
            other.b2,
            other.signed,
            other.one_per_bin,
            other.include_degenerate,
        )

    def config(self):
        return {
            "n": self.n,
            "b1": self.b1,
            "b2": self.b2,
            "signed": self.signed,
            "one_per_bin": self.one_per_bin,
            "include_degenerate": self.include_degenerate,
        }


def build_bins(n, b1=DEFAULT_B1, b2=DEFAULT_B2, one_per_bin=False, signed=False, include_degenerate=True):
    """Bin every pair of frequencies on the ``4n x 4n`` grid."""
    if n < 2:
        raise ValidationError("n must be >= 2")
    if b1 <= 0 or b2 <= 0:
        raise ValidationError("bin scales must be positive")
    L = 4 * n
    r = np.arange(-2 * n, 2 * n, dtype=float)
    k = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    radius = np.floor(b1 * np.hypot(k[:, 0], k[:, 1]) + _EDGE_EPS).astype(np.int64)
    n_ang = int(np.ceil(b2 * (2 * np.pi if signed else np.pi) - _EDGE_EPS))
    k1 = k[:, None, :]
    k2 = k[None, :, :]
    t = np.floor(b2 * _angle(k1, k2, signed) + _EDGE_EPS).astype(np.int64)
    np.minimum(t, n_ang - 1, out=t)
    zero = ~k.any(axis=1)
    t[zero, :] = -1
    t[:, zero] = -1
    R = int(radius.max()) + 1
    code = ((radius[:, None] * R + radius[None, :]) * (n_ang + 1) + (t + 1)).ravel()
    uniq, pair_bin = np.unique(code, return_inverse=True)
    keys = np.stack([uniq // ((n_ang + 1) * R), (uniq // (n_ang + 1)) % R, uniq % (n_ang + 1) - 1], axis=1)
    sizes = np.bincount(pair_bin, minlength=len(uniq))
    representative = np.full(len(uniq), L**4, dtype=np.int64)
    np.minimum.at(representative, pair_bin, np.arange(L**4, dtype=np.int64))
    return BinningScheme(
        n=int(n),
        b1=float(b1),
        b2=float(b2),
        signed=bool(signed),
        one_per_bin=bool(one_per_bin),
        include_degenerate=bool(include_degenerate),
        keys=keys,
        pair_bin=pair_bin.astype(np.int64),
        representative=representative,
        sizes=sizes,
    )


def bin_tensor(s3hat, scheme):
    """Binned values of a full ``(4n)^4`` frequency tensor over active bins.

    Bin sums in the default mode, representative entries in one-per-bin mode.
    """
    L = 4 * scheme.n
    s3hat = np.asarray(s3hat)
    if s3hat.shape != (L,) * 4:
        raise SchemeMismatch(f"tensor of shape {s3hat.shape} does not match the scheme grid {(L,) * 4}")
    flat = s3hat.reshape(L**4)
    active = scheme.active
    if scheme.one_per_bin:
        return flat[scheme.representative[active]]
    re = np.bincount(scheme.pair_bin, weights=flat.real, minlength=scheme.n_bins)
    im = np.bincount(scheme.pair_bin, weights=flat.imag, minlength=scheme.n_bins)
    return (re + 1j * im)[active]


@dataclass
class BinnedTarget:
    values: np.ndarray
    scheme: BinningScheme


def _evaluation_pairs(scheme):
    """Flat pair indices and their position in the active-bin vector."""
    L2 = (4 * scheme.n) ** 2
    active = scheme.active
    if scheme.one_per_bin:
        pairs = scheme.representative[active]
        slot = np.arange(len(active))
    else:
        position = np.full(scheme.n_bins, -1)
        position[active] = np.arange(len(active))
        slot_all = position[scheme.pair_bin]
        pairs = np.nonzero(slot_all >= 0)[0]
        slot = slot_all[pairs]
    i1, i2 = np.divmod(pairs, L2)
    return i1, i2, slot


class BinnedCost:
    """Binned least-squares cost with its exact gradient.

    :param target: binned target values, as returned by :func:`bin_tensor`.
    """

    def __init__(self, target, scheme, basis, weights):
        if weights is None:
            weights = PrecomputedWeights(basis)
        if not basis.same_as(weights.basis):
            raise SchemeMismatch("weights were built for a different basis")
        if scheme.n != basis.n:
            raise SchemeMismatch(f"scheme is for n={scheme.n}, basis for n={basis.n}")
        target = np.asarray(target, dtype=complex)
        if target.shape != (len(scheme.active),):
            raise SchemeMismatch(f"target has {target.size} bins, scheme has {len(scheme.active)} active bins")
        self.target = target
        self.scheme = scheme
        self.basis = basis
        self.weights = weights
        self.n_slots = len(target)
        i1, i2, slot = _evaluation_pairs(scheme)
        self._bin_matrix = None
        if not scheme.one_per_bin:
            # evaluate once per symmetry orbit; the bin matrix counts members
            L2 = (4 * basis.n) ** 2
            rep = orbit_representatives(basis.n)[i1 * L2 + i2]
            uniq, column = np.unique(rep, return_inverse=True)
            i1, i2 = np.divmod(uniq, L2)
            ones = np.ones(len(slot))
            self._bin_matrix = sparse.csr_matrix((ones, (slot, column)), shape=(self.n_slots, len(uniq)))
        self.pairs = PairSet(basis.n, i1, i2, weights.N)

    def model(self, z):
        A = self.weights.fourier(z)
        return self._binned(A)

    def _binned(self, A):
        vals = bispectrum_at(A, self.pairs, self.weights.weight)
        if self._bin_matrix is None:
            return vals
        return self._bin_matrix @ vals

    def jacobian(self, z):
        """Complex derivative of the binned model with respect to the real parameters."""
        A = self.weights.fourier(z)
        J = bispectrum_jacobian(A, self.pairs, self.weights) @ self.basis.real_map
        if self._bin_matrix is None:
            return J
        return self._bin_matrix @ J

    def __call__(self, z):
        """Return ``(cost, gradient)``; the gradient is in real parameters."""
        A = self.weights.fourier(z)
        diff = self._binned(A) - self.target
        cost = float(np.vdot(diff, diff).real)
        cot = 2 * np.conj(diff)
        if self._bin_matrix is not None:
            cot = self._bin_matrix.T @ cot
        H = fourier_cotangent(A, self.pairs, cot, self.weights.weight)
        grad = np.real(self.basis.real_map.T @ self.weights.adjoint(H))
        return cost, grad


def cost_and_grad(z, target, scheme, basis, weights=None):
    """Binned cost and its gradient with respect to the real parameters."""
    if isinstance(target, BinnedTarget):
        if not target.scheme.matches(scheme):
            raise SchemeMismatch("target was binned with a different scheme")
        target = target.values
    return BinnedCost(target, scheme, basis, weights)(z)


@dataclass
class RecoveryConfig:
    restarts: int = 5
    max_iterations: int = 10000
    gradient_tolerance: float = 1e-10
    init_scale: float = 1.0
    seed: int = 0
    optimizer: str = "auto"
    threads: int = 1
    polish: bool = True
    staged: bool = True

    def __post_init__(self):
        if self.restarts < 1:
            raise ValidationError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")
        if self.gradient_tolerance <= 0 or self.init_scale <= 0:
            raise ValidationError("tolerances and scales must be positive")
        if self.optimizer not in ("auto", "quasi-newton-full", "quasi-newton-limited"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RestartResult:
    index: int
    final_cost: float
    iterations: int
    converged: bool
    hit_max_iterations: bool
    scale: float
    quasi_newton_cost: float = float("nan")
    polish_evaluations: int = 0
    cost_trace: list = field(default_factory=list)
    x: np.ndarray = field(default=None, repr=False)


@dataclass
class RecoveryReport:
    restarts: list
    chosen: int
    seed: int
    config: dict

    def to_dict(self, traces=True):
        per = []
        for r in self.restarts:
            d = asdict(r)
            d.pop("x")
            if not traces:
                d.pop("cost_trace")
            per.append(d)
        return {"per_restart": per, "chosen": self.chosen, "seed": self.seed, "config": self.config}


def _optimizer_method(config, dim):
    kind = config.optimizer
    if kind == "auto":
        kind = "quasi-newton-full" if dim <= 200 else "quasi-newton-limited"
    return "BFGS" if kind == "quasi-newton-full" else "L-BFGS-B"


def _run_restart(index, seed_seq, cost, config, stage=None):
    """One random start: quasi-Newton on ``stage`` (default ``cost``), then polish on ``cost``."""
    final = cost
    cost = stage or cost
    basis = cost.basis
    rng = np.random.default_rng(seed_seq)
    x_unit = rng.standard_normal(basis.real_dim)
    # degree-3 homogeneity: scaling z by s scales the model by s^3
    model_norm = np.linalg.norm(cost.model(basis.from_real(x_unit)))
    target_norm = np.linalg.norm(cost.target)
    scale = config.init_scale * (
        np.cbrt(target_norm / model_norm) if model_norm > 0 and target_norm > 0 else 1.0
    )
    # optimize the dimensionless problem y = x / scale, cost / |target|^2
    cost_norm = target_norm**2 if target_norm > 0 else 1.0
    trace = []

    def fun(y):
        c, g = cost(basis.from_real(scale * y))
        return c / cost_norm, g * (scale / cost_norm)

    def callback(*args):
        trace.append(float(fun_cache[0]))

    fun_cache = [np.nan]

    def fun_traced(y):
        c, g = fun(y)
        fun_cache[0] = c
        return c, g

    method = _optimizer_method(config, basis.real_dim)
    options = {"maxiter": config.max_iterations, "gtol": config.gradient_tolerance}
    if method == "L-BFGS-B":
        options["ftol"] = 0.0
    res = optimize.minimize(fun_traced, x_unit, jac=True, method=method, options=options, callback=callback)
    y = res.x
    qn_cost = float(final(basis.from_real(scale * y))[0])
    final_cost = qn_cost
    hit_max = int(res.nit) >= config.max_iterations
    if hit_max:
        logger.info("restart %d hit max_iterations (%d)", index, config.max_iterations)
    n_polish = 0
    if config.polish:
        y_p, n_polish = _polish(final, y, scale, config)
        c = float(final(basis.from_real(scale * y_p))[0])
        if c <= final_cost:
            y, final_cost = y_p, c
    return RestartResult(
        index=index,
        final_cost=final_cost,
        iterations=int(res.nit),
        converged=bool(res.success),
        hit_max_iterations=hit_max,
        scale=float(scale),
        quasi_newton_cost=qn_cost,
        polish_evaluations=n_polish,
        cost_trace=trace,
        x=scale * y,
    )


def _polish(cost, y0, scale, config):
    """Levenberg-Marquardt on the stacked real and imaginary bin residuals.

    Quasi-Newton iterations stall on the flat directions of this problem long
    before the cost reaches round-off; a Gauss-Newton step with the exact
    Jacobian resolves them in a few iterations.
    """
    basis = cost.basis
    norm = np.linalg.norm(cost.target) or 1.0

    def residual(y):
        d = (cost.model(basis.from_real(scale * y)) - cost.target) / norm
        return np.concatenate([d.real, d.imag])

    def jac(y):
        J = cost.jacobian(basis.from_real(scale * y)) * (scale / norm)
        return np.vstack([J.real, J.imag])

    tol = np.finfo(float).eps
    res = optimize.least_squares(
        residual, y0, jac=jac, method="lm", xtol=tol, ftol=tol, gtol=tol, max_nfev=config.max_iterations
    )
    return res.x, int(res.nfev)


def _echo(config):
    d = asdict(config)
    d.pop("threads")
    return d


def recover(target, basis, scheme, config=None, weights=None):
    """Recover coefficients from a target bispectrum.

    :param target: the S3-normalized frequency-domain target, either the full
        ``(4n)^4`` tensor or an already binned vector over active bins.  With
        the full tensor, a full-bin scheme and ``config.staged``, the
        quasi-Newton stage fits one representative per bin and only the
        Levenberg-Marquardt polish sees the full bin sums.
    :param basis: basis to expand the unknown image in.
    :param scheme: :class:`BinningScheme`.
    :param config: :class:`RecoveryConfig`.
    :param weights: optional :class:`~rotinv.forward.PrecomputedWeights`.
    :returns: ``(z_best, report)``.
    """
    config = config or RecoveryConfig()
    target = np.asarray(target)
    stage = None
    if target.ndim == 4:
        if config.staged and config.polish and not scheme.one_per_bin:
            coarse = replace(scheme, one_per_bin=True)
            stage = BinnedCost(bin_tensor(target, coarse), coarse, basis, weights)
            weights = stage.weights
        target = bin_tensor(target, scheme)
    cost = BinnedCost(target, scheme, basis, weights)
    seeds = np.random.SeedSequence(config.seed).spawn(config.restarts)
    jobs = list(enumerate(seeds))
    # a failed line search only means the quasi-Newton stage ran out of
    # precision; the polish takes over from there
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="The line search algorithm did not converge")
        if config.threads == 1:
            results = [_run_restart(i, s, cost, config, stage) for i, s in jobs]
        else:
            workers = None if config.threads == 0 else config.threads
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda job: _run_restart(job[0], job[1], cost, config, stage), jobs))
    best = min(results, key=lambda r: (r.final_cost, r.index))
    report = RecoveryReport(
        restarts=results,
        chosen=best.index,
        seed=config.seed,
        # thread count is left out so reports do not depend on it
        config={**_echo(config), "scheme": scheme.config(), "quadrature": cost.weights.N},
    )
    return basis.from_real(best.x), report
