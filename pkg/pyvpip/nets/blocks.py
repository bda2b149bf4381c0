import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange


class LayerNorm(nn.Module):
    """Layer normalization over the channels of a ``(B, C, H, W)`` feature"""
    def __init__(self, dim, eps=1e-5):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        h, w = x.shape[-2:]
        x = rearrange(x, 'b c h w -> b (h w) c')
        mu = x.mean(-1, keepdim=True)
        sigma = x.var(-1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(sigma + self.eps) * self.weight + self.bias
        return rearrange(x, 'b (h w) c -> b c h w', h=h, w=w)


class FeedForward(nn.Module):
    """Gated depthwise-conv feed-forward"""
    def __init__(self, dim, expansion=2, bias=True):
        super().__init__()
        hidden = int(dim * expansion)
        self.project_in = nn.Conv2d(dim, hidden * 2, kernel_size=1, bias=bias)
        self.dwconv = nn.Conv2d(hidden * 2, hidden * 2, kernel_size=3, padding=1, groups=hidden * 2, bias=bias)
        self.project_out = nn.Conv2d(hidden, dim, kernel_size=1, bias=bias)

    def forward(self, x):
        x1, x2 = self.dwconv(self.project_in(x)).chunk(2, dim=1)
        return self.project_out(F.gelu(x1) * x2)


def _check_heads(dim, num_heads):
    if dim % num_heads != 0:
        raise ValueError('channels {} should be divisible by heads {}'.format(dim, num_heads))


class ChannelAttention(nn.Module):
    """
    Transposed (channel) self-attention

    Q, K and V come from a pointwise then depthwise convolution; the
    attention map is ``C/heads x C/heads`` per head, built from
    L2-normalized rows and scaled by a learnable temperature.

    :param dwconv: Apply the depthwise convolution after the pointwise one
    :type dwconv: bool
    """
    def __init__(self, dim, num_heads, bias=True, dwconv=True):
        super().__init__()
        _check_heads(dim, num_heads)
        self.num_heads = num_heads
        self.temperature = nn.Parameter(torch.ones(num_heads, 1, 1))
        self.qkv = nn.Conv2d(dim, dim * 3, kernel_size=1, bias=bias)
        self.qkv_dwconv = nn.Conv2d(dim * 3, dim * 3, kernel_size=3, padding=1, groups=dim * 3,
                                    bias=bias) if dwconv else nn.Identity()
        self.project_out = nn.Conv2d(dim, dim, kernel_size=1, bias=bias)

    def _qkv(self, x):
        q, k, v = self.qkv_dwconv(self.qkv(x)).chunk(3, dim=1)
        q = rearrange(q, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        k = rearrange(k, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        v = rearrange(v, 'b (head c) h w -> b head c (h w)', head=self.num_heads)
        return q, k, v

    def attention_probs(self, x, qkv=None):
        """
        Channel attention map of shape ``(B, heads, C/heads, C/heads)``

        :param qkv: Projections already computed by ``_qkv(x)``
        :type qkv: tuple, optional
        """
        q, k, _ = self._qkv(x) if qkv is None else qkv
        q = F.normalize(q, dim=-1)
        k = F.normalize(k, dim=-1)
        return ((q @ k.transpose(-2, -1)) * self.temperature).softmax(dim=-1)

    def core(self, x):
        """Attention applied to the values, before the output projection"""
        _, _, h, w = x.shape
        qkv = self._qkv(x)
        attn = self.attention_probs(x, qkv)
        return rearrange(attn @ qkv[2], 'b head c (h w) -> b (head c) h w', head=self.num_heads, h=h, w=w)

    def forward(self, x):
        return self.project_out(self.core(x))


class TransposedSelfAttentionBlock(nn.Module):
    """TSAB: channel attention and feed-forward, both pre-norm residual"""
    def __init__(self, dim, num_heads, ffn_expansion=2, bias=True):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = ChannelAttention(dim, num_heads, bias)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_expansion, bias)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


def window_partition(x, window_size):
    """``(B, C, H, W)`` to ``(B*nW, window_size**2, C)`` tokens"""
    return rearrange(x, 'b c (nh wh) (nw ww) -> (b nh nw) (wh ww) c', wh=window_size, ww=window_size)


def window_reverse(windows, window_size, h, w):
    return rearrange(windows, '(b nh nw) (wh ww) c -> b c (nh wh) (nw ww)',
                     nh=h // window_size, nw=w // window_size, wh=window_size, ww=window_size)


class WindowAttention(nn.Module):
    """Multi-head scaled dot-product attention inside non-overlapping windows"""
    def __init__(self, dim, num_heads, window_size, bias=True):
        super().__init__()
        _check_heads(dim, num_heads)
        self.num_heads = num_heads
        self.window_size = window_size
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3, bias=bias)
        self.proj = nn.Linear(dim, dim, bias=bias)

    def _check_size(self, x):
        h, w = x.shape[-2:]
        if h % self.window_size or w % self.window_size:
            raise ValueError('feature size {}x{} is not divisible by window {}'.format(h, w, self.window_size))

    def _qkv(self, x):
        self._check_size(x)
        tokens = window_partition(x, self.window_size)
        q, k, v = rearrange(self.qkv(tokens), 'n t (three head d) -> three n head t d',
                            three=3, head=self.num_heads)
        return q, k, v

    def attention_probs(self, x, qkv=None):
        q, k, _ = self._qkv(x) if qkv is None else qkv
        return ((q * self.scale) @ k.transpose(-2, -1)).softmax(dim=-1)

    def forward(self, x):
        h, w = x.shape[-2:]
        qkv = self._qkv(x)
        attn = self.attention_probs(x, qkv)
        out = self.proj(rearrange(attn @ qkv[2], 'n head t d -> n t (head d)'))
        return window_reverse(out, self.window_size, h, w)


class SpatialSelfAttentionBlock(nn.Module):
    """SSAB: window attention and feed-forward, both pre-norm residual"""
    def __init__(self, dim, num_heads, window_size, ffn_expansion=2, bias=True):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size, bias)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_expansion, bias)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.ffn(self.norm2(x))


class PromptCrossAttention(nn.Module):
    """
    Cross-attention over spatial tokens: queries from the input latent,
    keys from the prompt-source latent, values from the prompt-target latent
    """
    def __init__(self, dim, num_heads, bias=True):
        super().__init__()
        _check_heads(dim, num_heads)
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.to_q = nn.Linear(dim, dim, bias=bias)
        self.to_k = nn.Linear(dim, dim, bias=bias)
        self.to_v = nn.Linear(dim, dim, bias=bias)
        self.proj = nn.Linear(dim, dim, bias=bias)

    def _heads(self, x, proj):
        return rearrange(proj(rearrange(x, 'b c h w -> b (h w) c')), 'b t (head d) -> b head t d',
                         head=self.num_heads)

    def _logits(self, z, z_s):
        if z.shape != z_s.shape:
            raise ValueError('prompt latent shape {} does not match input latent {}'.format(
                tuple(z_s.shape), tuple(z.shape)))
        q = self._heads(z, self.to_q)
        k = self._heads(z_s, self.to_k)
        return (q * self.scale) @ k.transpose(-2, -1)

    def attention_probs(self, z, z_s):
        return self._logits(z, z_s).softmax(dim=-1)

    def forward(self, z, z_s, z_t):
        if z_t.shape != z.shape:
            raise ValueError('prompt latent shape {} does not match input latent {}'.format(
                tuple(z_t.shape), tuple(z.shape)))
        h, w = z.shape[-2:]
        attn = self.attention_probs(z, z_s)
        out = self.proj(rearrange(attn @ self._heads(z_t, self.to_v), 'b head t d -> b t (head d)'))
        return rearrange(out, 'b (h w) c -> b c h w', h=h, w=w)


class PromptCrossAttentionBlock(nn.Module):
    """PCAB: prompt cross-attention and feed-forward, both pre-norm residual"""
    def __init__(self, dim, num_heads, ffn_expansion=2, bias=True):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.norm_prompt = LayerNorm(dim)
        self.attn = PromptCrossAttention(dim, num_heads, bias)
        self.norm2 = LayerNorm(dim)
        self.ffn = FeedForward(dim, ffn_expansion, bias)

    def forward(self, z, z_s, z_t):
        z = z + self.attn(self.norm1(z), self.norm_prompt(z_s), self.norm_prompt(z_t))
        return z + self.ffn(self.norm2(z))


class ResBlock(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(dim, dim, kernel_size=3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.gelu(self.conv1(x)))
