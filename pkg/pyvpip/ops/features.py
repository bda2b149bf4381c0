import numpy as np
from scipy import ndimage
from ..utils.common import check_image, clamp01, luma, to_rgb

LAPLACIAN_KERNEL = np.array([[0., 1., 0.],
                             [1., -4., 1.],
                             [0., 1., 0.]])
CANNY_SIGMA = 1.0

# (dy, dx) step along the gradient for each quantized direction
_DIRECTION_STEPS = ((0, 1), (1, 1), (1, 0), (1, -1))


def laplacian_response(gray):
    """Signed 4-neighbour Laplacian with reflective boundaries

    :param gray: Single-channel image with shape ``(H, W)``
    :type gray: numpy.ndarray
    """
    return ndimage.correlate(gray, LAPLACIAN_KERNEL, mode='reflect')


def edge_laplacian(img):
    """Absolute Laplacian of the luma, clamped to [0, 1]
    """
    img = check_image(img)
    return to_rgb(clamp01(np.abs(laplacian_response(luma(img)))))


def sobel_gradients(gray):
    # Sobel scaled by 1/8 so a unit ramp has unit gradient
    gx = ndimage.sobel(gray, axis=1, mode='reflect') / 8.
    gy = ndimage.sobel(gray, axis=0, mode='reflect') / 8.
    return gx, gy


def non_max_suppression(mag, gx, gy):
    """Thin gradient magnitudes along the quantized gradient direction

    A pixel survives when it is strictly larger than its backward
    neighbour and not smaller than its forward one, so a symmetric ridge
    two pixels wide keeps exactly one of them.
    """
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    direction = np.mod(np.round(angle / (np.pi / 4)).astype(int), 4)
    padded = np.pad(mag, 1, mode='constant')
    height, width = mag.shape
    thinned = np.zeros_like(mag)
    for d, (dy, dx) in enumerate(_DIRECTION_STEPS):
        forward = padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        backward = padded[1 - dy:1 - dy + height, 1 - dx:1 - dx + width]
        keep = (direction == d) & (mag > backward) & (mag >= forward)
        thinned[keep] = mag[keep]
    return thinned


def hysteresis(thinned, low, high):
    """Keep weak edges 8-connected to at least one strong edge
    """
    weak = (thinned > 0) & (thinned >= low)
    strong = weak & (thinned >= high)
    labels, n_labels = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n_labels == 0:
        return np.zeros_like(weak)
    keep = np.zeros(n_labels + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def edge_canny(img, low, high):
    """Canny edge map

    Luma, Gaussian smoothing (sigma 1), Sobel gradients, non-maximum
    suppression and hysteresis linking. Thresholds are on the gradient
    magnitude of the [0, 1] image.

    :param low: Weak threshold
    :type low: float
    :param high: Strong threshold
    :type high: float
    :return: Binary edge map replicated to three channels
    :rtype: numpy.ndarray
    """
    img = check_image(img)
    if not 0 <= low < high <= 1:
        raise ValueError('thresholds should satisfy 0 <= low < high <= 1, got low={} high={}'.format(low, high))
    gray = ndimage.gaussian_filter(luma(img), CANNY_SIGMA, mode='reflect')
    gx, gy = sobel_gradients(gray)
    mag = np.hypot(gx, gy)
    edges = hysteresis(non_max_suppression(mag, gx, gy), low, high)
    return to_rgb(edges.astype(np.float64))
