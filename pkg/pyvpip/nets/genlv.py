import json
from collections.abc import Mapping
from dataclasses import dataclass, field, asdict
import numpy as np
import torch
import torch.nn as nn
from ..setuplog import SetupLog
from .blocks import (TransposedSelfAttentionBlock, SpatialSelfAttentionBlock,
                     PromptCrossAttentionBlock, ResBlock)

N_LEVELS = 4
INIT_STD = 0.02


@dataclass
class ModelConfig:
    """
    Widths and depths of a GenLV network

    :param num_blocks: Blocks per level, the last one being the bottleneck
    :param channels: Feature channels per level, strictly increasing
    :param heads: Attention heads per level
    :param prompt_channels: Channels of the first prompt-encoder level
    :param window_size: Window of the spatial attention
    :param image_size: Training crop in pixels
    :param prompt_blocks: Residual blocks per prompt-encoder level
    :param ffn_expansion: Hidden expansion of the feed-forward sub-blocks
    :param zero_head: Zero-initialize the output convolution
    """
    num_blocks: list = field(default_factory=lambda: [1, 1, 1, 1])
    channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    prompt_channels: int = 16
    window_size: int = 4
    image_size: int = 64
    prompt_blocks: int = 4
    ffn_expansion: float = 2
    zero_head: bool = True

    def validate(self):
        for name in ('num_blocks', 'channels', 'heads'):
            value = getattr(self, name)
            if len(value) != N_LEVELS:
                raise ValueError('{} should list {} levels, got {}'.format(name, N_LEVELS, value))
            if any(int(v) < 1 for v in value):
                raise ValueError('{} should be positive, got {}'.format(name, value))
        if any(b <= a for a, b in zip(self.channels[:-1], self.channels[1:])):
            raise ValueError('channels should be strictly increasing across levels, got {}'.format(self.channels))
        for c, h in zip(self.channels, self.heads):
            if c % h != 0:
                raise ValueError('channels[i] should be divisible by heads[i], got {} and {}'.format(c, h))
        if self.image_size % 8 != 0:
            raise ValueError('image_size should be divisible by 8, got {}'.format(self.image_size))
        if self.window_size < 1 or (self.image_size // 8) % self.window_size != 0:
            raise ValueError('window_size {} should divide image_size/8 = {}'.format(
                self.window_size, self.image_size // 8))
        if self.prompt_channels < 1 or self.prompt_blocks < 1:
            raise ValueError('prompt_channels and prompt_blocks should be positive')
        return self

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError('Unknown model config keys: {}'.format(', '.join(sorted(unknown))))
        return cls(**{k: (list(v) if isinstance(v, (list, tuple)) else v) for k, v in doc.items()})


MODEL_VARIANTS = {
    'desk-base': dict(num_blocks=[1, 1, 1, 1], channels=[16, 32, 64, 128], heads=[1, 2, 4, 8],
                      prompt_channels=16, window_size=4, image_size=64),
    'desk-large': dict(num_blocks=[1, 2, 2, 2], channels=[24, 48, 96, 192], heads=[1, 2, 4, 8],
                       prompt_channels=16, window_size=4, image_size=64),
    'desk-huge': dict(num_blocks=[2, 2, 2, 3], channels=[32, 64, 128, 256], heads=[1, 2, 4, 8],
                      prompt_channels=16, window_size=4, image_size=64),
    'paper-base': dict(num_blocks=[2, 4, 4, 4], channels=[48, 96, 192, 384], heads=[1, 2, 4, 8],
                       prompt_channels=32, window_size=8, image_size=256),
    'paper-large': dict(num_blocks=[4, 6, 6, 8], channels=[64, 128, 256, 512], heads=[2, 4, 8, 16],
                        prompt_channels=64, window_size=8, image_size=256),
    'paper-huge': dict(num_blocks=[6, 8, 8, 12], channels=[80, 160, 320, 640], heads=[2, 4, 8, 16],
                       prompt_channels=64, window_size=8, image_size=256),
}


def model_variant(name, **kwargs):
    """ModelConfig of a named variant, fields overridable by ``kwargs``"""
    if name not in MODEL_VARIANTS:
        raise ValueError('Unknown model variant {}, should be one of {}'.format(
            name, ', '.join(MODEL_VARIANTS)))
    doc = dict(MODEL_VARIANTS[name])
    doc.update(kwargs)
    return ModelConfig(**doc).validate()


class PromptEncoder(nn.Module):
    """
    Residual conv encoder shared by both prompt images

    Four levels of residual blocks with three stride-2 downsamplings, then a
    pointwise projection to the bottleneck width.
    """
    def __init__(self, prompt_channels, out_channels, blocks_per_level=4, in_channels=3):
        super().__init__()
        widths = [prompt_channels * 2 ** i for i in range(N_LEVELS)]
        self.stem = nn.Conv2d(in_channels, widths[0], kernel_size=3, padding=1)
        self.levels = nn.ModuleList([
            nn.Sequential(*[ResBlock(w) for _ in range(blocks_per_level)]) for w in widths])
        self.downs = nn.ModuleList([
            nn.Conv2d(widths[i], widths[i + 1], kernel_size=3, stride=2, padding=1)
            for i in range(N_LEVELS - 1)])
        self.proj = nn.Conv2d(widths[-1], out_channels, kernel_size=1)

    def forward(self, x):
        x = self.stem(x)
        for i, level in enumerate(self.levels):
            x = level(x)
            if i < len(self.downs):
                x = self.downs[i](x)
        return self.proj(x)


class EncoderBlock(nn.Module):
    """TSAB followed by SSAB"""
    def __init__(self, dim, num_heads, window_size, ffn_expansion=2):
        super().__init__()
        self.tsab = TransposedSelfAttentionBlock(dim, num_heads, ffn_expansion)
        self.ssab = SpatialSelfAttentionBlock(dim, num_heads, window_size, ffn_expansion)

    def forward(self, x):
        return self.ssab(self.tsab(x))


class LatentBlock(nn.Module):
    """TSAB followed by prompt cross-attention"""
    def __init__(self, dim, num_heads, ffn_expansion=2):
        super().__init__()
        self.tsab = TransposedSelfAttentionBlock(dim, num_heads, ffn_expansion)
        self.pcab = PromptCrossAttentionBlock(dim, num_heads, ffn_expansion)

    def forward(self, x, z_s, z_t):
        return self.pcab(self.tsab(x), z_s, z_t)


class Upsample(nn.Module):
    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.body = nn.Sequential(nn.Conv2d(in_channels, out_channels * 4, kernel_size=1),
                                  nn.PixelShuffle(2))

    def forward(self, x):
        return self.body(x)


class GenLV(nn.Module):
    """
    Prompt-conditioned U-shaped image-to-image network

    Three encoder levels of [TSAB+SSAB] blocks with strided-conv
    downsampling, a bottleneck of [TSAB+PCAB] blocks fed by the encoded
    prompt pair, and a mirrored decoder with skip concatenation. The head
    output is added to the input image and clamped to [0, 1].

    :param config: Widths and depths
    :type config: ModelConfig
    """
    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        c, heads, ws, ex = config.channels, config.heads, config.window_size, config.ffn_expansion
        self.prompt_encoder = PromptEncoder(config.prompt_channels, c[-1], config.prompt_blocks)
        self.stem = nn.Conv2d(3, c[0], kernel_size=3, padding=1)
        self.encoders = nn.ModuleList([
            nn.Sequential(*[EncoderBlock(c[i], heads[i], ws, ex) for _ in range(config.num_blocks[i])])
            for i in range(N_LEVELS - 1)])
        self.downs = nn.ModuleList([
            nn.Conv2d(c[i], c[i + 1], kernel_size=3, stride=2, padding=1) for i in range(N_LEVELS - 1)])
        self.latent = nn.ModuleList([LatentBlock(c[-1], heads[-1], ex) for _ in range(config.num_blocks[-1])])
        self.ups = nn.ModuleList([Upsample(c[i + 1], c[i]) for i in range(N_LEVELS - 1)])
        self.reduces = nn.ModuleList([nn.Conv2d(2 * c[i], c[i], kernel_size=1) for i in range(N_LEVELS - 1)])
        self.decoders = nn.ModuleList([
            nn.Sequential(*[EncoderBlock(c[i], heads[i], ws, ex) for _ in range(config.num_blocks[i])])
            for i in range(N_LEVELS - 1)])
        self.head = nn.Conv2d(c[0], 3, kernel_size=3, padding=1)

    def _check_input(self, x, name, size=None):
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError('{} should have shape (B, 3, H, W), got {}'.format(name, tuple(x.shape)))
        h, w = x.shape[-2:]
        if size is not None and (h != size or w != size):
            raise ValueError('{} should be {}x{}, got {}x{}'.format(name, size, size, h, w))
        if h % 8 or w % 8:
            raise ValueError('{} size {}x{} should be divisible by 8'.format(name, h, w))

    def prompt_encode(self, source, target):
        """
        Encode a prompt pair with shared weights

        :return: ``(z_s, z_t)`` at the bottleneck resolution and width
        """
        size = self.config.image_size
        self._check_input(source, 'prompt source', size)
        self._check_input(target, 'prompt target', size)
        return self.prompt_encoder(source), self.prompt_encoder(target)

    def encode(self, x):
        """Skip features of the three encoder levels and the bottleneck input"""
        skips = []
        x = self.stem(x)
        for encoder, down in zip(self.encoders, self.downs):
            x = encoder(x)
            skips.append(x)
            x = down(x)
        return skips, x

    def restore(self, x, z_s, z_t):
        """Backbone output before clamping"""
        self._check_input(x, 'input')
        skips, h = self.encode(x)
        z_s = z_s.expand(h.shape[0], -1, -1, -1) if z_s.shape[0] == 1 else z_s
        z_t = z_t.expand(h.shape[0], -1, -1, -1) if z_t.shape[0] == 1 else z_t
        for block in self.latent:
            h = block(h, z_s, z_t)
        for i in reversed(range(N_LEVELS - 1)):
            h = self.reduces[i](torch.cat([self.ups[i](h), skips[i]], dim=1))
            h = self.decoders[i](h)
        return x + self.head(h)

    def backbone(self, x, z_s, z_t):
        return torch.clamp(self.restore(x, z_s, z_t), 0., 1.)

    def forward(self, x, prompt_source, prompt_target):
        z_s, z_t = self.prompt_encode(prompt_source, prompt_target)
        return self.backbone(x, z_s, z_t)


def no_weight_decay(name, param):
    return param.ndim <= 1 or name.endswith('bias') or 'norm' in name or name.endswith('temperature')


def init_weights(model, init_seed):
    """Truncated-normal projections, zero biases, unit norms and temperatures"""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(init_seed))
        for name, param in model.named_parameters():
            with torch.no_grad():
                if name.endswith('temperature') or ('norm' in name and name.endswith('weight')):
                    param.fill_(1.)
                elif name.endswith('bias'):
                    param.zero_()
                else:
                    nn.init.trunc_normal_(param, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
    if model.config.zero_head:
        with torch.no_grad():
            model.head.weight.zero_()
            model.head.bias.zero_()
    return model


def build_model(config, init_seed=0):
    """
    Build and initialize a GenLV network

    :param config: Widths and depths, validated
    :type config: ModelConfig
    :param init_seed: Seed of the initialization
    :type init_seed: int
    :rtype: GenLV
    """
    log = SetupLog()
    if isinstance(config, Mapping):
        config = ModelConfig.from_dict(config)
    model = init_weights(GenLV(config.validate()), init_seed)
    log.Modellog.info('Built GenLV with {:,} parameters (seed {})'.format(count_params(model), init_seed))
    return model


def count_params(weights):
    """
    Total number of scalar parameters

    :param weights: A module or a mapping of names to arrays/tensors
    :rtype: int
    """
    if isinstance(weights, nn.Module):
        return int(sum(p.numel() for p in weights.parameters()))
    return int(sum(np.size(v) if not torch.is_tensor(v) else v.numel() for v in weights.values()))
