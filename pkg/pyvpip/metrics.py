import numpy as np
from scipy.signal import correlate2d
from .utils.common import luma

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError('images should have the same shape, got {} and {}'.format(a.shape, b.shape))
    return a, b


def psnr(a, b):
    """
    Peak signal-to-noise ratio in dB for images in [0, 1]

    MSE is taken over all pixels and channels; identical images give
    ``inf``.

    :rtype: float
    """
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return np.inf
    return float(10. * np.log10(DATA_RANGE ** 2 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def _gray(img):
    return img if img.ndim == 2 else luma(img)


def ssim(a, b):
    """
    Structural similarity of the luma over valid 11x11 Gaussian windows

    :rtype: float
    """
    a, b = _check_pair(a, b)
    a, b = _gray(a), _gray(b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError('images should be at least {0}x{0} pixels for SSIM, got {1}'.format(SSIM_WINDOW, a.shape))
    win = gaussian_window()
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2

    def filt(x):
        return correlate2d(x, win, mode='valid')

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def mae(a, b):
    """Mean absolute error on the 0-255 scale"""
    a, b = _check_pair(a, b)
    return float(255. * np.mean(np.abs(a - b)))
