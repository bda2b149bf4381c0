import numpy as np
from ..utils.common import check_image, clamp01, luma

TONE_KINDS = ('brightness', 'contrast', 'saturation', 'gamma')
HIST_BINS = 256


def adjust_tone(img, kind, factor):
    """Global tone adjustment

    ============== =======================================================
    kind           Mapping
    ============== =======================================================
    ``brightness`` ``img*factor``
    ``contrast``   ``(img-0.5)*factor+0.5``
    ``saturation`` ``luma + factor*(img-luma)``; ``factor=0`` is grayscale
    ``gamma``      ``img**factor``
    ============== =======================================================

    :param kind: One of ``brightness``, ``contrast``, ``saturation``, ``gamma``
    :type kind: str
    :param factor: Positive factor (non-negative for ``saturation``)
    :type factor: float
    """
    img = check_image(img)
    if kind not in TONE_KINDS:
        raise ValueError('Unknown tone kind {}, should be one of {}'.format(kind, ', '.join(TONE_KINDS)))
    if factor < 0 or (factor == 0 and kind != 'saturation'):
        raise ValueError('factor should be positive for {}, got {}'.format(kind, factor))
    if factor == 1:
        return img.copy()
    if kind == 'brightness':
        out = img * factor
    elif kind == 'contrast':
        out = (img - 0.5) * factor + 0.5
    elif kind == 'saturation':
        if img.shape[2] == 1:
            return img.copy()
        gray = luma(img)[:, :, np.newaxis]
        out = gray + factor * (img - gray)
    else:
        out = np.power(img, factor)
    return clamp01(out)


def hist_equalize(img):
    """Per-channel histogram equalization over 256 bins

    The map sends the lowest occupied bin to 0 and the highest to 1; a
    channel with a single occupied bin is returned unchanged.
    """
    img = check_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        channel = img[:, :, c]
        bins = np.clip(np.floor(channel * HIST_BINS).astype(int), 0, HIST_BINS - 1)
        hist = np.bincount(bins.ravel(), minlength=HIST_BINS)
        cdf = np.cumsum(hist) / bins.size
        cdf_min = cdf[hist > 0][0]
        if cdf_min >= 1.:
            out[:, :, c] = channel
            continue
        lut = np.clip((cdf - cdf_min) / (1. - cdf_min), 0., 1.)
        out[:, :, c] = lut[bins]
    return out
