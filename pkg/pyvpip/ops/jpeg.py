"""Baseline JPEG round trip computed in-process

8x8 block DCT of full-range YCbCr without chroma subsampling, using the
Annex K quantization tables scaled by quality. No entropy coding is
needed because it is lossless.
"""
import numpy as np
from scipy.fft import dctn, idctn
from ..utils.common import check_image, clamp01

BLOCK = 8

LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

CHROMA_TABLE = np.array([
    [17, 18, 24, 47, 99, 99, 99, 99],
    [18, 21, 26, 66, 99, 99, 99, 99],
    [24, 26, 56, 99, 99, 99, 99, 99],
    [47, 66, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
    [99, 99, 99, 99, 99, 99, 99, 99],
], dtype=np.float64)

# JFIF full-range conversion
_RGB2YCC = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def scaled_table(table, quality):
    """Scale a quantization table by quality (Annex K convention)

    :param table: Base 8x8 table
    :type table: numpy.ndarray
    :param quality: Quality in [1, 100]
    :type quality: int
    """
    if quality < 50:
        scale = 5000. / quality
    else:
        scale = 200. - 2. * quality
    return np.clip(np.floor((table * scale + 50.) / 100.), 1., 255.)


def _blocks(channel):
    h, w = channel.shape
    return channel.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def _unblocks(blocks):
    nh, nw = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(nh * BLOCK, nw * BLOCK)


def _quantize_channel(channel, table):
    coefs = dctn(_blocks(channel), axes=(2, 3), norm='ortho')
    coefs = np.round(coefs / table) * table
    return _unblocks(idctn(coefs, axes=(2, 3), norm='ortho'))


def apply_jpeg_like(img, quality):
    """Simulate JPEG compression at ``quality``

    :param img: Input image
    :type img: numpy.ndarray
    :param quality: Integer quality in [1, 100]
    :type quality: int
    """
    img = check_image(img)
    if int(quality) != quality or not 1 <= quality <= 100:
        raise ValueError('quality should be an integer in [1, 100], got {}'.format(quality))
    quality = int(quality)
    height, width = img.shape[:2]
    pad_h = (-height) % BLOCK
    pad_w = (-width) % BLOCK
    padded = np.pad(img * 255., ((0, pad_h), (0, pad_w), (0, 0)), mode='edge')

    if padded.shape[2] == 3:
        ycc = padded @ _RGB2YCC.T
        ycc[:, :, 0] -= 128.
        tables = [scaled_table(LUMA_TABLE, quality)] + [scaled_table(CHROMA_TABLE, quality)] * 2
    else:
        ycc = padded - 128.
        tables = [scaled_table(LUMA_TABLE, quality)]
    out = np.stack([_quantize_channel(ycc[:, :, c], tables[c]) for c in range(ycc.shape[2])], axis=2)
    if out.shape[2] == 3:
        out[:, :, 0] += 128.
        out = out @ _YCC2RGB.T
    else:
        out = out + 128.
    return clamp01(out[:height, :width] / 255.)
