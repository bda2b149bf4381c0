import numpy as np
from scipy import ndimage
from ..utils.common import check_image, clamp01, luma, to_rgb
from .degrade import apply_gaussian_blur
from .features import laplacian_response

DODGE_EPS = 1e-6
CARTOON_EDGE_GAIN = 4.0


def stylize_pencil(img, blur_sigma):
    """Pencil sketch by color dodge of the luma with its blurred negative

    :param blur_sigma: Blur of the negative in pixels, positive
    :type blur_sigma: float
    :return: Three identical channels
    :rtype: numpy.ndarray
    """
    img = check_image(img)
    if blur_sigma <= 0:
        raise ValueError('blur_sigma should be positive, got {}'.format(blur_sigma))
    gray = luma(img)
    negative = apply_gaussian_blur((1. - gray)[:, :, np.newaxis], blur_sigma)[:, :, 0]
    denom = 1. - negative
    dodge = np.where(denom <= DODGE_EPS, 1., gray / np.maximum(denom, DODGE_EPS))
    return to_rgb(np.minimum(1., dodge))


def posterize(img, levels):
    """Uniform quantization of each channel to ``levels`` values
    """
    if levels < 2:
        raise ValueError('levels should be at least 2, got {}'.format(levels))
    steps = levels - 1
    return np.round(img * steps) / steps


def stylize_cartoon(img, levels, smooth_iters):
    """Edge-preserving cartoon abstraction

    Median smoothing, posterization, then darkening along Laplacian edges
    of the smoothed luma.

    :param levels: Values per channel, at least 2
    :type levels: int
    :param smooth_iters: Rounds of 3x3 median filtering, non-negative
    :type smooth_iters: int
    """
    img = check_image(img)
    if levels < 2:
        raise ValueError('levels should be at least 2, got {}'.format(levels))
    if smooth_iters < 0:
        raise ValueError('smooth_iters should be non-negative, got {}'.format(smooth_iters))
    smooth = img
    for _ in range(int(smooth_iters)):
        smooth = ndimage.median_filter(smooth, size=(3, 3, 1), mode='reflect')
    flat = posterize(smooth, int(levels))
    edges = np.clip(np.abs(laplacian_response(luma(smooth))) * CARTOON_EDGE_GAIN, 0., 1.)
    return clamp01(flat * (1. - edges)[:, :, np.newaxis])
