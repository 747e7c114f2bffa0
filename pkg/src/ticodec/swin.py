"""Windowed attention blocks.

Feature embed/unembed between (N,C,H,W) maps and (N,HW,C) token grids,
window partition with optional cyclic shift, relative-position-biased
multi-head attention with the cross-window mask, and the transformer
block (LN -> WA -> res, LN -> MLP -> res, LN -> SWA -> res, LN -> MLP -> res)
wrapped between embed and unembed.
"""

from __future__ import annotations

import functools

import numpy as np

from .layers import MLP, LayerNorm, Linear, Module, Parameter
from .tensor import ShapeError, Tensor

MASK_VALUE = -1e9


def feature_embed(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,HW,C), positions in row-major (H,W) order."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).transpose(0, 2, 1)


def feature_unembed(tokens: Tensor, h: int, w: int) -> Tensor:
    """Inverse of feature_embed; exact layout bijection."""
    n, t, c = tokens.shape
    if t != h * w:
        raise ShapeError(f"token count {t} does not match {h}x{w}")
    return tokens.transpose(0, 2, 1).reshape(n, c, h, w)


def window_partition(x: Tensor, window: int, shift: int = 0) -> Tensor:
    """(N,C,H,W) -> (N * H/w * W/w, w*w, C) non-overlapping windows.

    A positive shift cyclically rolls the grid by (-shift, -shift) first.
    """
    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"extents {h}x{w} not divisible by window {window}")
    if shift:
        x = x.roll((-shift, -shift), (2, 3))
    nh, nw = h // window, w // window
    x = x.reshape(n, c, nh, window, nw, window)
    x = x.transpose(0, 2, 4, 3, 5, 1)  # N, nh, nw, wh, ww, C
    return x.reshape(n * nh * nw, window * window, c)


def window_reverse(
    windows: Tensor, window: int, h: int, w: int, shift: int = 0
) -> Tensor:
    """Inverse of window_partition (including the inverse roll)."""
    nh, nw = h // window, w // window
    n = windows.shape[0] // (nh * nw)
    c = windows.shape[2]
    x = windows.reshape(n, nh, nw, window, window, c)
    x = x.transpose(0, 5, 1, 3, 2, 4).reshape(n, c, h, w)
    if shift:
        x = x.roll((shift, shift), (2, 3))
    return x


def relative_position_index(window: int) -> np.ndarray:
    """(w^2, w^2) table mapping token pairs to bias rows.

    The row index is the fixed bijection (di + w - 1) * (2w - 1) + (dj + w - 1)
    over relative offsets (di, dj) in [-(w-1), w-1]^2.
    """
    coords = np.stack(
        np.meshgrid(np.arange(window), np.arange(window), indexing="ij"), axis=-1
    ).reshape(-1, 2)
    rel = coords[:, None, :] - coords[None, :, :]  # (T, T, 2)
    return (rel[:, :, 0] + window - 1) * (2 * window - 1) + (rel[:, :, 1] + window - 1)


@functools.lru_cache(maxsize=None)
def shift_attention_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """(num_windows, w^2, w^2) additive mask forbidding cross-window pairs."""
    img = np.zeros((h, w))
    region = 0
    spans_h = (slice(0, h - window), slice(h - window, h - shift), slice(h - shift, h))
    spans_w = (slice(0, w - window), slice(w - window, w - shift), slice(w - shift, w))
    for sh in spans_h:
        for sw in spans_w:
            img[sh, sw] = region
            region += 1
    rolled = np.roll(img, (-shift, -shift), axis=(0, 1))
    nh, nw = h // window, w // window
    wins = rolled.reshape(nh, window, nw, window).transpose(0, 2, 1, 3)
    wins = wins.reshape(nh * nw, window * window)
    diff = wins[:, None, :] != wins[:, :, None]
    return np.where(diff, MASK_VALUE, 0.0)


class WindowAttention(Module):
    """Multi-head self-attention inside windows with relative position bias."""

    def __init__(self, channels: int, heads: int, window: int, rng):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.window = window
        self.qkv = Linear(channels, 3 * channels, rng)
        self.proj = Linear(channels, channels, rng)
        self.rel_bias = Parameter(np.zeros(((2 * window - 1) ** 2, heads)))
        self._rel_index_cache: dict[int, np.ndarray] = {}

    def _rel_index(self, window: int) -> np.ndarray:
        # effective window may be clamped below self.window on small grids;
        # its offsets index a subrange of the same bias table
        idx = self._rel_index_cache.get(window)
        if idx is None:
            coords = np.stack(
                np.meshgrid(np.arange(window), np.arange(window), indexing="ij"),
                axis=-1,
            ).reshape(-1, 2)
            rel = coords[:, None, :] - coords[None, :, :]
            w = self.window
            idx = (rel[:, :, 0] + w - 1) * (2 * w - 1) + (rel[:, :, 1] + w - 1)
            idx = idx.reshape(-1)
            self._rel_index_cache[window] = idx
        return idx

    def __call__(
        self, windows: Tensor, mask: np.ndarray | None = None, window: int | None = None
    ) -> Tensor:
        window = window or self.window
        b, t, c = windows.shape
        if t != window * window:
            raise ShapeError(f"expected {window ** 2} tokens per window, got {t}")
        h = self.heads
        d = c // h
        qkv = self.qkv(windows).reshape(b, t, 3, h, d).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        bias = self.rel_bias[self._rel_index(window)].reshape(t, t, h).transpose(2, 0, 1)
        logits = logits + bias
        if mask is not None:
            nw = mask.shape[0]
            logits = logits.reshape(b // nw, nw, h, t, t) + Tensor(
                mask.reshape(1, nw, 1, t, t)
            )
            logits = logits.reshape(b, h, t, t)
        attn = softmax(logits)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, c)
        return self.proj(out)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`."""
    shift = Tensor(x.data.max(axis=axis, keepdims=True))  # constant under grad
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


class SwinLayer(Module):
    """One transformer layer: plain-window and shifted-window attention halves."""

    def __init__(self, channels: int, heads: int, window: int, rng, mlp_ratio=4.0):
        self.window = window
        self.norm1 = LayerNorm(channels)
        self.attn = WindowAttention(channels, heads, window, rng)
        self.norm2 = LayerNorm(channels)
        self.mlp1 = MLP(channels, rng, mlp_ratio)
        self.norm3 = LayerNorm(channels)
        self.shift_attn = WindowAttention(channels, heads, window, rng)
        self.norm4 = LayerNorm(channels)
        self.mlp2 = MLP(channels, rng, mlp_ratio)

    def _attend(self, tokens: Tensor, h: int, w: int, attn, shifted: bool) -> Tensor:
        n = tokens.shape[0]
        window = min(self.window, h, w)
        shift = window // 2 if shifted and (h > window or w > window) else 0
        x = feature_unembed(tokens, h, w)
        wins = window_partition(x, window, shift)
        mask = shift_attention_mask(h, w, window, shift) if shift else None
        wins = attn(wins, mask, window)
        x = window_reverse(wins, window, h, w, shift)
        return feature_embed(x)

    def __call__(self, tokens: Tensor, h: int, w: int) -> Tensor:
        tokens = tokens + self._attend(self.norm1(tokens), h, w, self.attn, False)
        tokens = tokens + self.mlp1(self.norm2(tokens))
        tokens = tokens + self._attend(self.norm3(tokens), h, w, self.shift_attn, True)
        tokens = tokens + self.mlp2(self.norm4(tokens))
        return tokens


class SwinBlock(Module):
    """Embed -> transformer layers -> unembed; identity path via residuals.

    The input reaches the output unchanged through the residual chain, so a
    block with all-zero projection weights is an exact identity.
    """

    def __init__(
        self,
        channels: int,
        heads: int,
        window: int,
        rng,
        depth: int = 1,
        mlp_ratio: float = 4.0,
    ):
        self.window = window
        self.layers = [
            SwinLayer(channels, heads, window, rng, mlp_ratio) for _ in range(depth)
        ]

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        tokens = feature_embed(x)
        for layer in self.layers:
            tokens = layer(tokens, h, w)
        return feature_unembed(tokens, h, w)
