import os
import hashlib
import tempfile
from contextlib import contextmanager
import numpy as np

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
MIN_IMAGE_SIZE = 8
_SEED_MASK = (1 << 63) - 1


def check_image(img, name='img'):
    """Validate an image array and return it as float64

    :param img: Image with shape ``(H, W, C)``, ``C`` in {1, 3}, values in [0, 1]
    :type img: numpy.ndarray
    :param name: Name used in error messages, defaults to 'img'
    :type name: str, optional
    :return: The image as a float64 array
    :rtype: numpy.ndarray
    """
    if not isinstance(img, np.ndarray):
        raise TypeError('{} should be a numpy.ndarray, got {}'.format(name, type(img).__name__))
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError('{} should have shape (H, W, C) with C in {{1, 3}}, got {}'.format(name, img.shape))
    if img.shape[0] < MIN_IMAGE_SIZE or img.shape[1] < MIN_IMAGE_SIZE:
        raise ValueError('{} should be at least {}x{} pixels, got {}x{}'.format(
            name, MIN_IMAGE_SIZE, MIN_IMAGE_SIZE, img.shape[0], img.shape[1]))
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)):
        raise ValueError('{} contains non-finite values'.format(name))
    return img


def clamp01(img):
    return np.clip(img, 0., 1.)


def luma(img):
    """Luma channel of an image

    :param img: Image with shape ``(H, W, C)``
    :type img: numpy.ndarray
    :return: Luma with shape ``(H, W)``
    :rtype: numpy.ndarray
    """
    if img.shape[2] == 1:
        return img[:, :, 0].copy()
    return img @ LUMA_WEIGHTS


def to_rgb(gray):
    return np.repeat(gray[:, :, np.newaxis], 3, axis=2)


def default_ksize(sigma):
    """Odd kernel size covering three standard deviations
    """
    return 2 * int(np.ceil(3 * sigma)) + 1


def gaussian_kernel1d(sigma, ksize):
    """Normalized 1-D Gaussian kernel

    :param sigma: Standard deviation in pixels, 0 for a delta kernel
    :type sigma: float
    :param ksize: Odd kernel size
    :type ksize: int
    :return: Kernel of length ``ksize`` summing to 1
    :rtype: numpy.ndarray
    """
    if sigma < 0:
        raise ValueError('sigma should be non-negative, got {}'.format(sigma))
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError('ksize should be a positive odd integer, got {}'.format(ksize))
    radius = ksize // 2
    if sigma == 0:
        kernel = np.zeros(ksize)
        kernel[radius] = 1.
        return kernel
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def stable_seed(*parts):
    """63-bit seed derived from a stable hash of ``parts``

    The hash does not depend on the interpreter's hash randomization,
    so seeds survive process restarts.
    """
    key = ':'.join(str(p) for p in parts).encode('utf-8')
    digest = hashlib.blake2b(key, digest_size=8).digest()
    return int.from_bytes(digest, 'little') & _SEED_MASK


def make_rng(seed, *stream):
    """``numpy.random.Generator`` for ``seed`` and an optional sub-stream
    """
    entropy = [int(seed)] + [int(s) for s in stream]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def str2val(str_val):
    if not isinstance(str_val, str):
        return str_val
    lowered = str_val.strip().lower()
    if lowered in ('true', 'yes'):
        return True
    if lowered in ('false', 'no'):
        return False
    if lowered in ('none', 'null'):
        return None

    # single value handling
    # return integer
    try:
        return int(str_val)
    except ValueError:
        pass

    # return float
    try:
        return float(str_val)
    except ValueError:
        pass

    # list values handling
    # return list of integer
    try:
        return [int(v) for v in str_val.strip('[]').split(',')]
    except ValueError:
        pass

    # return list of float
    try:
        return [float(v) for v in str_val.strip('[]').split(',')]
    except ValueError:
        pass

    return str_val


@contextmanager
def atomic_path(fname):
    """Yield a temporary path next to ``fname`` and move it into place on success
    """
    dirname = os.path.dirname(os.path.abspath(fname))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix='.tmp-', suffix=os.path.splitext(fname)[1])
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, fname)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


class DirLock():
    """Exclusive lock file guarding an output directory

    :param path: Output directory
    :type path: str
    """
    lock_name = '.vpip.lock'

    def __init__(self, path):
        self.path = path
        self.fname = os.path.join(path, self.lock_name)
        self._fd = None

    def __enter__(self):
        os.makedirs(self.path, exist_ok=True)
        try:
            self._fd = os.open(self.fname, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError('{} is locked by another vpip process (remove {} if stale)'.format(
                self.path, self.fname))
        os.write(self._fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        os.close(self._fd)
        os.remove(self.fname)
        return False
