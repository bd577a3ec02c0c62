"""Synthetic measurements: rotated, well-separated copies of a target plus noise.

Positions use 1-based pixel coordinates ``{1, ..., m}^2``; array element
``pixels[i, j]`` holds the measurement at pixel ``(i + 1, j + 1)``.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .basis import steer, synthesize
from .errors import PlacementFailure, SizeMismatch, ValidationError
from .grid import support_mask
from .seeding import substream

logger = logging.getLogger(__name__)

RETRIES_PER_TARGET = 1000


class Placement(NamedTuple):
    position: tuple
    angle: float


@dataclass
class Micrograph:
    m: int
    pixels: np.ndarray
    n: int = 0
    sigma: float = 0.0
    placements: list = field(default_factory=list)
    gamma: float = 0.0
    seed: int = None

    def metadata(self):
        return {
            "m": self.m,
            "n": self.n,
            "sigma": self.sigma,
            "seed": self.seed,
            "gamma": self.gamma,
            "placements": [
                {"position": [int(c) for c in pl.position], "angle": float(pl.angle)} for pl in self.placements
            ],
        }


def is_separated(a, b, n):
    """Strict separation ``|a - b| > 4n``."""
    d1 = int(a[0]) - int(b[0])
    d2 = int(a[1]) - int(b[1])
    return d1 * d1 + d2 * d2 > 16 * n * n


def check_placements(positions, m, n):
    for i, a in enumerate(positions):
        if not all(n <= int(c) <= m - n + 1 for c in a):
            raise ValidationError(f"position {tuple(a)} is outside the band [{n}, {m - n + 1}]")
        for b in positions[:i]:
            if not is_separated(a, b, n):
                raise ValidationError(f"positions {tuple(a)} and {tuple(b)} are not separated by more than {4 * n}")


def packing_estimate(m, n):
    """Rough upper bound on the number of targets that fit in an ``m x m`` frame."""
    side = m - 2 * n + 2 + 4 * n
    return int(0.9069 * side * side / (np.pi * (2 * n) ** 2))


def place_targets(m, n, p, rng):
    """Draw ``p`` separated positions by uniform rejection sampling.

    Raises :class:`PlacementFailure` after ``1000 p`` rejected candidates.
    """
    if m <= 4 * n:
        raise SizeMismatch(f"m={m} must exceed 4n={4 * n}")
    if p < 0:
        raise ValidationError("p must be >= 0")
    positions = []
    budget = RETRIES_PER_TARGET * p
    lo, hi = n, m - n + 1
    while len(positions) < p:
        if budget == 0:
            raise PlacementFailure(
                f"placed {len(positions)} of {p} targets before exhausting the retry budget; "
                f"a {m}x{m} frame holds at most about {packing_estimate(m, n)} targets with n={n}"
            )
        budget -= 1
        cand = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
        if all(is_separated(cand, q, n) for q in positions):
            positions.append(cand)
    return positions


def render_micrograph(z, basis, placements, sigma, m, rng=None):
    """Sum of steered copies of the target plus i.i.d. Gaussian noise.

    Each copy is ``synthesize(steer(z, angle))`` translated so that its
    centre sits at the placement position.  Noise is drawn from ``rng`` as
    one ``m x m`` standard normal field, so the signal and noise parts are
    reproducible separately.
    """
    n = basis.n
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    placements = [Placement(tuple(pl[0]), float(pl[1])) for pl in placements]
    check_placements([pl.position for pl in placements], m, n)
    pixels = np.zeros((m, m))
    window = slice(n + 1, 3 * n)
    for pl in placements:
        image = synthesize(steer(z, pl.angle, basis), basis)
        r, c = pl.position[0] - 1, pl.position[1] - 1
        pixels[r - n + 1 : r + n, c - n + 1 : c + n] += image[window, window]
    if sigma > 0:
        if rng is None:
            raise ValidationError("a random generator is required when sigma > 0")
        pixels = pixels + sigma * rng.standard_normal((m, m))
    return Micrograph(m=m, pixels=pixels, n=n, sigma=float(sigma), placements=placements)


def simulate(z, basis, m, sigma, seed, p=None, gamma=None):
    """Place targets and render a micrograph with labelled substreams of ``seed``.

    Exactly one of ``p`` or ``gamma`` (targets per pixel) must be given.
    """
    if (p is None) == (gamma is None):
        raise ValidationError("give exactly one of p or gamma")
    if p is None:
        p = int(round(gamma * m * m))
    rng_place = substream(seed, "placement")
    positions = place_targets(m, basis.n, p, rng_place)
    angles = substream(seed, "rotation").uniform(0, 2 * np.pi, size=p)
    placements = [Placement(pos, float(a)) for pos, a in zip(positions, angles)]
    mg = render_micrograph(z, basis, placements, sigma, m, substream(seed, "noise"))
    mg.gamma = p / (m * m)
    mg.seed = seed
    return mg


def measure_snr(z, basis, sigma):
    """Mean signal power over the support disk divided by ``sigma^2``."""
    if sigma == 0:
        raise ZeroDivisionError("SNR is undefined for sigma = 0")
    mask = support_mask(basis.n)
    image = synthesize(z, basis)
    return float(np.sum(image[mask] ** 2) / (mask.sum() * sigma**2))


def sigma_for_snr(z, basis, snr):
    """Noise level giving the requested :func:`measure_snr` value."""
    mask = support_mask(basis.n)
    image = synthesize(z, basis)
    return float(np.sqrt(np.sum(image[mask] ** 2) / (mask.sum() * snr)))
