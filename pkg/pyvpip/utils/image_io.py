import numpy as np
from PIL import Image as PILImage
from .common import atomic_path, check_image


def quantize8(img):
    """Round an image in [0, 1] to the 8-bit grid, ``round(v*255)``
    """
    return np.round(np.clip(img, 0., 1.) * 255.).astype(np.uint8)


def read_image(fname, size=None):
    """Read an image file as float64 RGB in [0, 1]

    :param fname: Path to image
    :type fname: str
    :param size: Center-crop to a square and resize to ``size`` x ``size`` when given
    :type size: int, optional
    :return: Image with shape ``(H, W, 3)``
    :rtype: numpy.ndarray
    """
    with PILImage.open(fname) as im:
        im = im.convert('RGB')
        if size is not None:
            im = crop_resize(im, size)
        arr = np.asarray(im, dtype=np.float64) / 255.
    return arr


def crop_resize(im, size):
    w, h = im.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    im = im.crop((left, top, left + side, top + side))
    if side != size:
        im = im.resize((size, size), resample=PILImage.BICUBIC)
    return im


def write_image(fname, img):
    """Write an image in [0, 1] as an 8-bit PNG (atomically)

    :param fname: Output path
    :type fname: str
    :param img: Image with shape ``(H, W, C)`` or ``(H, W)``
    :type img: numpy.ndarray
    """
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    arr = quantize8(img)
    mode = 'L' if arr.ndim == 2 else 'RGB'
    with atomic_path(fname) as tmp:
        PILImage.fromarray(arr, mode=mode).save(tmp, format='PNG')


def resize_image(img, size, resample=PILImage.BICUBIC):
    """Resize a float image with Pillow, per channel in float precision

    :param img: Image with shape ``(H, W, C)``
    :type img: numpy.ndarray
    :param size: Output ``(height, width)``
    :type size: tuple
    """
    height, width = size
    channels = []
    for c in range(img.shape[2]):
        im = PILImage.fromarray(img[:, :, c].astype(np.float32), mode='F')
        im = im.resize((width, height), resample=resample)
        channels.append(np.asarray(im, dtype=np.float64))
    return np.stack(channels, axis=2)


def make_grid(rows, pad=2):
    """Stack rows of equally sized panels into one image

    :param rows: List of rows, each a list of images with shape ``(H, W, 3)``
    :type rows: list
    :param pad: White gap between panels in pixels
    :type pad: int
    """
    lines = []
    for panels in rows:
        panels = [check_image(p) if p.shape[2] == 3 else np.repeat(p, 3, axis=2) for p in panels]
        height = panels[0].shape[0]
        gap = np.ones((height, pad, 3))
        line = [panels[0]]
        for p in panels[1:]:
            line += [gap, p]
        lines.append(np.concatenate(line, axis=1))
    gap = np.ones((pad, lines[0].shape[1], 3))
    out = [lines[0]]
    for line in lines[1:]:
        out += [gap, line]
    return np.concatenate(out, axis=0)
