import numpy as np
import torch
from .utils.common import check_image

TILE_OVERLAP = 16


def to_tensor(img, device='cpu', dtype=torch.float32):
    """``(H, W, C)`` image to a ``(1, 3, H, W)`` tensor"""
    img = check_image(img)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).unsqueeze(0).to(device=device, dtype=dtype)


def to_image(tensor):
    """``(1, 3, H, W)`` or ``(3, H, W)`` tensor to a float64 ``(H, W, 3)`` image"""
    if tensor.ndim == 4:
        tensor = tensor[0]
    return tensor.detach().cpu().double().numpy().transpose(1, 2, 0)


def _param_spec(model):
    param = next(model.parameters())
    return param.device, param.dtype


@torch.no_grad()
def forward_full(img, prompt, model):
    """
    Apply the task demonstrated by ``prompt`` to ``img``

    :param img: Input at the model's image size
    :type img: numpy.ndarray
    :param prompt: Prompt pair at the model's image size
    :type prompt: pyvpip.tasks.PromptPair
    :param model: Network
    :type model: pyvpip.nets.GenLV
    :return: Output image in [0, 1]
    :rtype: numpy.ndarray
    """
    device, dtype = _param_spec(model)
    size = model.config.image_size
    if img.shape[0] != size or img.shape[1] != size:
        raise ValueError('input should be {}x{}, got {}x{}; use tiled_forward for other sizes'.format(
            size, size, img.shape[0], img.shape[1]))
    model.eval()
    out = model(to_tensor(img, device, dtype), to_tensor(prompt.source, device, dtype),
                to_tensor(prompt.target, device, dtype))
    return to_image(out)


def _starts(n, tile, stride):
    if n <= tile:
        return [0]
    return list(range(0, n - tile, stride)) + [n - tile]


@torch.no_grad()
def tiled_forward(img, prompt, model, overlap=TILE_OVERLAP):
    """
    Inference on an image of any size by overlapping tiles

    Tiles have the model's image size, which is also the size the prompt
    latents are aligned to. The image is reflect-padded to at least one
    tile, tiles are averaged where they overlap and the padding is cropped
    away. The prompt pair is encoded once.

    :param overlap: Overlap between neighbouring tiles in pixels
    :type overlap: int
    """
    img = check_image(img)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    tile = model.config.image_size
    if not 0 <= overlap < tile:
        raise ValueError('overlap should be in [0, {}), got {}'.format(tile, overlap))
    device, dtype = _param_spec(model)
    model.eval()
    height, width = img.shape[:2]
    padded = np.pad(img, ((0, max(0, tile - height)), (0, max(0, tile - width)), (0, 0)), mode='reflect')
    z_s, z_t = model.prompt_encode(to_tensor(prompt.source, device, dtype),
                                   to_tensor(prompt.target, device, dtype))
    acc = np.zeros_like(padded)
    weight = np.zeros(padded.shape[:2] + (1,))
    stride = tile - overlap
    for y0 in _starts(padded.shape[0], tile, stride):
        for x0 in _starts(padded.shape[1], tile, stride):
            patch = padded[y0:y0 + tile, x0:x0 + tile]
            out = model.backbone(to_tensor(patch, device, dtype), z_s, z_t)
            acc[y0:y0 + tile, x0:x0 + tile] += to_image(out)
            weight[y0:y0 + tile, x0:x0 + tile] += 1.
    return np.clip(acc / weight, 0., 1.)[:height, :width]


class GenLVPredictor():
    """
    Callable ``(image, prompt, target=None) -> output`` around a network

    Inputs at the model size go through :func:`forward_full`, others
    through :func:`tiled_forward`.
    """
    def __init__(self, model, overlap=TILE_OVERLAP):
        self.model = model
        self.overlap = overlap

    def __repr__(self):
        return 'GenLVPredictor(image_size={})'.format(self.model.config.image_size)

    def __call__(self, image, prompt, target=None):
        size = self.model.config.image_size
        if image.shape[0] == size and image.shape[1] == size:
            return forward_full(image, prompt, self.model)
        return tiled_forward(image, prompt, self.model, self.overlap)


def oracle_predictor(image, prompt, target=None):
    """Returns the ground truth"""
    if target is None:
        raise ValueError('the oracle predictor needs the target image')
    return np.array(target, dtype=np.float64)


def identity_predictor(image, prompt, target=None):
    return np.array(image, dtype=np.float64)


PREDICTORS = {
    'oracle': oracle_predictor,
    'identity': identity_predictor,
}
