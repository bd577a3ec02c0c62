"""Test images placed on the centred grid."""

import numpy as np

from .basis import build_basis, expand, synthesize
from .grid import support_mask


def cat_image(n):
    """Grayscale cat face from scikit-image, resampled to ``(2n+1)^2`` pixels.

    Returned on the ``4n x 4n`` grid, zero outside the disk ``|x| < n`` and
    scaled to unit maximum.
    """
    from skimage import color, data, transform

    img = color.rgb2gray(data.chelsea())
    # square crop around the face
    img = img[20:280, 60:320]
    small = transform.resize(img, (2 * n + 1, 2 * n + 1), anti_aliasing=True, order=3)
    out = np.zeros((4 * n, 4 * n))
    out[n : 3 * n + 1, n : 3 * n + 1] = small
    out[~support_mask(n)] = 0.0
    return out / out.max()


def model_coefficients(n=8, count=100, basis=None):
    """Coefficients of the cat image expanded in the first ``count`` eigenfunctions.

    :returns: ``(z0, basis)``; ``synthesize(z0, basis)`` is the model image.
    """
    if basis is None:
        basis = build_basis(n, count=count)
    return expand(cat_image(basis.n), basis), basis


def model_image(n=8, count=100):
    z0, basis = model_coefficients(n, count)
    return synthesize(z0, basis)
