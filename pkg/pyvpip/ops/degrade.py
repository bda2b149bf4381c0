"""Restoration-side degradation operators

All operators take and return ``(H, W, C)`` float64 images in [0, 1].
Seeded operators are pure functions of their inputs and seed.
"""
import numpy as np
from scipy import ndimage
from PIL import Image as PILImage
from ..utils.common import check_image, clamp01, gaussian_kernel1d, default_ksize, make_rng
from ..utils.image_io import resize_image

RL_EPS = 1e-12
INPAINT_FILL = 0.5


def apply_gaussian_noise(img, sigma, seed):
    """Add i.i.d. Gaussian noise

    :param img: Input image
    :type img: numpy.ndarray
    :param sigma: Standard deviation in [0, 1] intensity units
    :type sigma: float
    :param seed: Random seed
    :type seed: int
    """
    img = check_image(img)
    if sigma < 0:
        raise ValueError('sigma should be non-negative, got {}'.format(sigma))
    if sigma == 0:
        return img.copy()
    noise = make_rng(seed).normal(0., sigma, img.shape)
    return clamp01(img + noise)


def apply_poisson_noise(img, peak, seed):
    """Photon-count noise, ``Poisson(img*peak)/peak``

    :param peak: Photon count of a unit intensity
    :type peak: float
    """
    img = check_image(img)
    if peak <= 0:
        raise ValueError('peak should be positive, got {}'.format(peak))
    counts = make_rng(seed).poisson(img * peak)
    return clamp01(counts / peak)


def apply_salt_pepper(img, p, seed):
    """Replace each pixel with black or white with probability ``p``

    The whole pixel (all channels) is replaced.
    """
    img = check_image(img)
    if not 0 <= p <= 1:
        raise ValueError('p should be in [0, 1], got {}'.format(p))
    rng = make_rng(seed)
    hit = rng.random(img.shape[:2]) < p
    salt = rng.random(img.shape[:2]) < 0.5
    out = img.copy()
    out[hit & salt] = 1.
    out[hit & ~salt] = 0.
    return out


def apply_gaussian_blur(img, sigma, ksize=None):
    """Separable Gaussian blur with reflective boundaries

    :param sigma: Standard deviation in pixels
    :type sigma: float
    :param ksize: Odd kernel size, defaults to ``2*ceil(3*sigma)+1``
    :type ksize: int, optional
    """
    img = check_image(img)
    if ksize is None:
        ksize = default_ksize(sigma)
    kernel = gaussian_kernel1d(sigma, ksize)
    return clamp01(_separable(img, kernel))


def _separable(img, kernel):
    # half-sample symmetric padding keeps the image sum for symmetric kernels
    out = ndimage.correlate1d(img, kernel, axis=0, mode='reflect')
    return ndimage.correlate1d(out, kernel, axis=1, mode='reflect')


def apply_ringing(img, cutoff):
    """Ideal low-pass filtering, which rings at edges

    Frequencies are measured by their radius normalized so that the
    corner of the spectrum (Nyquist on both axes) is 1.

    :param cutoff: Kept normalized radius, in (0, 1]
    :type cutoff: float
    """
    img = check_image(img)
    if not 0 < cutoff <= 1:
        raise ValueError('cutoff should be in (0, 1], got {}'.format(cutoff))
    height, width = img.shape[:2]
    fy = np.fft.fftfreq(height) / 0.5
    fx = np.fft.fftfreq(width) / 0.5
    radius = np.sqrt(fy[:, None] ** 2 + fx[None, :] ** 2) / np.sqrt(2.)
    keep = radius <= cutoff
    spectrum = np.fft.fft2(img, axes=(0, 1))
    spectrum[~keep] = 0.
    return clamp01(np.real(np.fft.ifft2(spectrum, axes=(0, 1))))


def richardson_lucy(observed, kernel, iters, callback=None):
    """Richardson-Lucy deconvolution with a separable symmetric PSF

    :param observed: Blurred image, non-negative
    :type observed: numpy.ndarray
    :param kernel: 1-D kernel; the PSF is its outer product
    :type kernel: numpy.ndarray
    :param iters: Number of iterations
    :type iters: int
    :param callback: Called with every iterate
    :type callback: callable, optional
    """
    if iters < 1:
        raise ValueError('iters should be at least 1, got {}'.format(iters))
    estimate = observed.copy()
    # the PSF is symmetric so its adjoint is itself
    for _ in range(iters):
        reblurred = _separable(estimate, kernel)
        ratio = observed / np.maximum(reblurred, RL_EPS)
        estimate = estimate * _separable(ratio, kernel)
        if callback is not None:
            callback(estimate)
    return estimate


def apply_rl_artifact(img, psf_sigma, iters, callback=None):
    """Blur with a Gaussian PSF, then deconvolve with Richardson-Lucy

    :param psf_sigma: PSF standard deviation in pixels
    :type psf_sigma: float
    :param iters: RL iterations, at least 1
    :type iters: int
    """
    img = check_image(img)
    if iters < 1:
        raise ValueError('iters should be at least 1, got {}'.format(iters))
    kernel = gaussian_kernel1d(psf_sigma, default_ksize(psf_sigma))
    blurred = apply_gaussian_blur(img, psf_sigma, kernel.size)
    return clamp01(richardson_lucy(blurred, kernel, int(iters), callback=callback))


def apply_pixelation(img, factor):
    """Block-average then nearest-neighbor upscale

    Blocks at the right and bottom edges are truncated.

    :param factor: Block size, at least 2
    :type factor: int
    """
    img = check_image(img)
    factor = int(factor)
    if factor < 2:
        raise ValueError('factor should be at least 2, got {}'.format(factor))
    height, width = img.shape[:2]
    rows = np.arange(0, height, factor)
    cols = np.arange(0, width, factor)
    # offset from the block minimum so block-constant input maps to itself exactly
    block_min = np.minimum.reduceat(np.minimum.reduceat(img, rows, axis=0), cols, axis=1)
    expand_min = _expand_blocks(block_min, factor, height, width)
    sums = np.add.reduceat(np.add.reduceat(img - expand_min, rows, axis=0), cols, axis=1)
    counts = np.outer(np.diff(np.append(rows, height)), np.diff(np.append(cols, width)))
    means = block_min + sums / counts[:, :, None]
    return clamp01(_expand_blocks(means, factor, height, width))


def _expand_blocks(blocks, factor, height, width):
    out = np.repeat(np.repeat(blocks, factor, axis=0), factor, axis=1)
    return out[:height, :width]


def apply_inpaint_mask(img, coverage, seed):
    """Mask random rectangles and brush strokes with neutral gray

    The masked fraction ends in ``[coverage*0.8, coverage*1.2]``.

    :param coverage: Target masked fraction, in (0, 0.5)
    :type coverage: float
    :return: The masked image and the boolean mask with shape ``(H, W)``
    :rtype: tuple
    """
    img = check_image(img)
    if not 0 < coverage < 0.5:
        raise ValueError('coverage should be in (0, 0.5), got {}'.format(coverage))
    rng = make_rng(seed)
    height, width = img.shape[:2]
    total = height * width
    limit = int(np.floor(coverage * 1.2 * total))
    target = int(np.ceil(coverage * total))
    if limit < target:
        raise ValueError('coverage {} cannot be met on a {}x{} image: no pixel count in [{:.2f}, {:.2f}]'.format(
            coverage, height, width, 0.8 * coverage * total, 1.2 * coverage * total))
    mask = np.zeros((height, width), dtype=bool)
    while mask.sum() < target:
        room = limit - int(mask.sum())
        if room <= 0:
            break
        if rng.random() < 0.5:
            _add_rectangle(mask, rng, room)
        else:
            _add_stroke(mask, rng, room)
    out = img.copy()
    out[mask] = INPAINT_FILL
    return out, mask


def _add_rectangle(mask, rng, room):
    height, width = mask.shape
    rh = int(rng.integers(1, max(2, height // 4) + 1))
    rw = int(rng.integers(1, max(2, width // 4) + 1))
    while rh * rw > room and (rh > 1 or rw > 1):
        if rh >= rw:
            rh -= 1
        else:
            rw -= 1
    top = int(rng.integers(0, height - rh + 1))
    left = int(rng.integers(0, width - rw + 1))
    mask[top:top + rh, left:left + rw] = True


def _add_stroke(mask, rng, room):
    height, width = mask.shape
    y = float(rng.integers(0, height))
    x = float(rng.integers(0, width))
    angle = rng.uniform(0, 2 * np.pi)
    added = 0
    for _ in range(int(rng.integers(8, 4 * max(height, width)))):
        yi, xi = int(round(y)), int(round(x))
        brush = mask[max(0, yi - 1):yi + 2, max(0, xi - 1):xi + 2]
        new = int((~brush).sum())
        if added + new > room:
            break
        brush[...] = True
        added += new
        angle += rng.normal(0., 0.4)
        y = np.clip(y + np.sin(angle), 0, height - 1)
        x = np.clip(x + np.cos(angle), 0, width - 1)


def apply_rain_streaks(img, density, angle, seed):
    """Additive synthetic rain streaks

    :param density: Expected number of streaks per 1000 pixels
    :type density: float
    :param angle: Streak angle from vertical in degrees, in [-45, 45]
    :type angle: float
    """
    img = check_image(img)
    if density <= 0:
        raise ValueError('density should be positive, got {}'.format(density))
    if not -45 <= angle <= 45:
        raise ValueError('angle should be in [-45, 45], got {}'.format(angle))
    rng = make_rng(seed)
    height, width = img.shape[:2]
    n_streaks = rng.poisson(density * height * width / 1000.)
    if n_streaks == 0:
        return img.copy()
    theta = np.deg2rad(angle)
    dy, dx = np.cos(theta), np.sin(theta)
    layer = np.zeros((height, width))
    for _ in range(n_streaks):
        length = rng.uniform(max(4, height / 16), max(5, height / 4))
        alpha = rng.uniform(0.2, 0.6)
        y0 = rng.uniform(0, height)
        x0 = rng.uniform(0, width)
        t = np.arange(0, length, 0.5)
        ys = np.round(y0 + t * dy).astype(int)
        xs = np.round(x0 + t * dx).astype(int)
        inside = (ys >= 0) & (ys < height) & (xs >= 0) & (xs < width)
        layer[ys[inside], xs[inside]] = np.maximum(layer[ys[inside], xs[inside]], alpha)
    layer = ndimage.convolve(layer, _motion_kernel(dy, dx), mode='constant')
    return clamp01(img + layer[:, :, None])


def _motion_kernel(dy, dx):
    # three taps at -1, 0, +1 pixel along the streak, bilinearly splatted
    kernel = np.zeros((3, 3))
    for t in (-1., 0., 1.):
        y, x = 1 + t * dy, 1 + t * dx
        y0, x0 = int(np.floor(y)), int(np.floor(x))
        fy, fx = y - y0, x - x0
        for yy, wy in ((y0, 1 - fy), (y0 + 1, fy)):
            for xx, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                if 0 <= yy < 3 and 0 <= xx < 3:
                    kernel[yy, xx] += wy * wx / 3.
    return kernel / kernel.sum()


def apply_downsample(img, scale):
    """Bicubic down-sampling by ``scale`` followed by bicubic up-sampling

    :param scale: Integer scale factor, at least 2
    :type scale: int
    """
    img = check_image(img)
    scale = int(scale)
    if scale < 2:
        raise ValueError('scale should be at least 2, got {}'.format(scale))
    height, width = img.shape[:2]
    small = (max(1, height // scale), max(1, width // scale))
    low = resize_image(img, small, resample=PILImage.BICUBIC)
    return clamp01(resize_image(low, (height, width), resample=PILImage.BICUBIC))
