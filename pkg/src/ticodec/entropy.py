"""Entropy modeling of the latents.

Quantization (uniform-noise surrogate for training, rounding for coding),
the conditional Gaussian rate model, the per-channel factorized prior for
the hyper-latent, and the causal attention module that predicts (mu, sigma)
for every latent position from its strictly-past neighborhood plus the
hyper features.
"""

from __future__ import annotations

import numpy as np

from .layers import MLP, Linear, Module, Parameter, unfold_patches
from .swin import MASK_VALUE, feature_embed, feature_unembed, softmax
from .tensor import Tensor, no_grad

SIGMA_MIN = 0.11
LIKELIHOOD_MIN = 1e-9
LOG2 = np.log(2.0)
SQRT2 = np.sqrt(2.0)


def quantize(y: Tensor, mode: str, mu: Tensor | None = None, rng=None) -> Tensor:
    """Quantize latents.

    mode="noise": adds i.i.d. uniform noise in [-0.5, 0.5) (training
    surrogate, differentiable w.r.t. y).  mode="round": round-half-to-even,
    optionally mean-subtracted (round(y - mu) + mu); detached from the tape.
    """
    if mode == "noise":
        noise = rng.uniform(-0.5, 0.5, size=y.shape)
        return y + Tensor(noise)
    if mode == "round":
        if mu is not None:
            return Tensor(np.rint(y.data - mu.data) + mu.data)
        return Tensor(np.rint(y.data))
    raise ValueError(f"unknown quantize mode {mode!r}")


def gaussian_cdf(x: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr

    return ndtr(x)


def gaussian_likelihood(y: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Probability of y falling in its unit quantization bin under N(mu, sigma)."""
    u = (y - mu) / sigma
    half = 0.5 / sigma
    upper = ((u + half) / SQRT2).erf()
    lower = ((u - half) / SQRT2).erf()
    p = (upper - lower) * 0.5
    return p.maximum(LIKELIHOOD_MIN)


def gaussian_bits(y: Tensor, mu: Tensor, sigma: Tensor) -> Tensor:
    """Total coded size estimate of y in bits."""
    p = gaussian_likelihood(y, mu, sigma)
    return -p.log().sum() * (1.0 / LOG2)


class FactorizedPrior(Module):
    """Per-channel monotone CDF over the hyper-latent.

    A stack of 1-D monotone transforms (dims 1 -> 3 -> 3 -> 1): matrices are
    softplus-reparameterized positive, gating factors stay in (-1, 1), so
    the resulting CDF is strictly increasing by construction.
    """

    DIMS = (1, 3, 3, 1)

    def __init__(self, channels: int):
        self.channels = channels
        init = np.log(np.expm1(0.5))  # softplus ~= 0.5, overall unit-ish slope
        self.matrices = [
            Parameter(np.full((channels, dout, din), init))
            for din, dout in zip(self.DIMS[:-1], self.DIMS[1:])
        ]
        self.biases = [
            Parameter(np.zeros((channels, dout, 1))) for dout in self.DIMS[1:]
        ]
        self.factors = [
            Parameter(np.zeros((channels, dout, 1))) for dout in self.DIMS[1:-1]
        ]

    def logits(self, v: Tensor) -> Tensor:
        """v: (C, 1, M) values -> (C, 1, M) pre-sigmoid CDF logits."""
        u = v
        last = len(self.matrices) - 1
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            u = m.softplus() @ u + b
            if i < last:
                u = u + self.factors[i].tanh() * u.tanh()
        return u

    def cdf(self, values: np.ndarray) -> np.ndarray:
        """(C, M) float values -> (C, M) CDF, tape-free."""
        with no_grad():
            v = Tensor(values.reshape(self.channels, 1, -1))
            out = self.logits(v).sigmoid()
        return out.data.reshape(values.shape)

    def likelihood(self, z: Tensor) -> Tensor:
        """z: (N, C, h, w) -> same-shape bin probabilities."""
        n, c, h, w = z.shape
        v = z.transpose(1, 0, 2, 3).reshape(c, 1, n * h * w)
        p = (self.logits(v + 0.5)).sigmoid() - (self.logits(v - 0.5)).sigmoid()
        p = p.maximum(LIKELIHOOD_MIN)
        return p.reshape(c, n, h, w).transpose(1, 0, 2, 3)

    def bits(self, z: Tensor) -> Tensor:
        return -self.likelihood(z).log().sum() * (1.0 / LOG2)

    def pmf_tables(self, symbol_bound: int) -> np.ndarray:
        """(C, 2L+2) table: P(z = k) for k in [-L, L] plus a trailing tail mass."""
        ks = np.arange(-symbol_bound, symbol_bound + 1, dtype=np.float64)
        edges = np.concatenate([ks - 0.5, [ks[-1] + 0.5]])
        cdf = self.cdf(np.broadcast_to(edges, (self.channels, edges.size)).copy())
        pmf = np.diff(cdf, axis=1)
        tail = np.clip(cdf[:, :1] + (1.0 - cdf[:, -1:]), 1e-12, None)
        return np.concatenate([pmf, tail], axis=1)


class CausalAttention(Module):
    """Context model: masked attention over each position's causal neighborhood.

    The quantized latent grid is unfolded into patch x patch neighborhoods;
    slots at or after the raster center are zeroed and additionally masked
    out of the attention, so the prediction for a position sees only
    strictly-earlier symbols.  The attended context is fused with the hyper
    features of that position by an MLP emitting (mu, sigma_raw) per channel.
    """

    def __init__(
        self,
        channels: int,
        hyper_channels: int,
        rng,
        patch: int = 5,
        dim: int | None = None,
        sigma_min: float = SIGMA_MIN,
    ):
        self.channels = channels
        self.patch = patch
        self.sigma_min = sigma_min
        d = dim or channels
        self.embed = Linear(channels, d, rng)
        self.qkv = Linear(d, 3 * d, rng)
        self.proj = Linear(d, d, rng)
        self.fuse = MLP(d + hyper_channels, rng, ratio=1.0, out_channels=2 * channels)
        t = patch * patch
        center = t // 2
        # values: zero out center and later slots; keys: additive -inf mask
        self._value_mask = (np.arange(t) < center).astype(np.float64).reshape(1, 1, t, 1)
        self._key_mask = np.where(np.arange(t) < center, 0.0, MASK_VALUE).reshape(
            1, 1, 1, t
        )

    def _predict_tokens(self, patches: Tensor, hyper_tokens: Tensor):
        """patches: (N, P, B^2, C); hyper_tokens: (N, P, 1, Ch) -> mu, sigma (N, P, C)."""
        n, p, t, c = patches.shape
        tok = self.embed(patches * Tensor(self._value_mask))
        d = tok.shape[-1]
        qkv = self.qkv(tok)
        q = qkv[:, :, t // 2 : t // 2 + 1, :d]
        k = qkv[:, :, :, d : 2 * d]
        v = qkv[:, :, :, 2 * d :]
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(d))
        attn = softmax(logits + Tensor(self._key_mask))
        ctx = self.proj(attn @ v)  # (N, P, 1, d)
        from .tensor import concat

        fused = self.fuse(concat([ctx, hyper_tokens], axis=-1))  # (N, P, 1, 2C)
        mu = fused[:, :, 0, : self.channels]
        sigma_raw = fused[:, :, 0, self.channels :]
        sigma = sigma_raw.softplus() + self.sigma_min
        return mu, sigma

    def __call__(self, y_hat: Tensor, hyper: Tensor):
        """Batched prediction over all positions: (mu, sigma) as (N, C, h, w)."""
        n, c, h, w = y_hat.shape
        patches = unfold_patches(y_hat, self.patch)
        ht = feature_embed(hyper)  # (N, P, Ch)
        hyper_tokens = ht.reshape(n, h * w, 1, hyper.shape[1])
        mu, sigma = self._predict_tokens(patches, hyper_tokens)
        return (
            feature_unembed(mu, h, w),
            feature_unembed(sigma, h, w),
        )

    def predict_one(self, patch_values: np.ndarray, hyper_vec: np.ndarray):
        """Serial-decode prediction for a single position.

        patch_values: (B^2, C) neighborhood in raster order (future slots may
        hold anything; they are masked).  hyper_vec: (Ch,).  Returns
        (mu, sigma) as (C,) float arrays, bit-identical to the batched path.
        """
        t = self.patch * self.patch
        with no_grad():
            patches = Tensor(patch_values.reshape(1, 1, t, -1))
            hyper_tokens = Tensor(hyper_vec.reshape(1, 1, 1, -1))
            mu, sigma = self._predict_tokens(patches, hyper_tokens)
        return mu.data.reshape(-1), sigma.data.reshape(-1)
