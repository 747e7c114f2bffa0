"""Layers composing the codec transforms.

Strided conv / transpose conv (k=3, s=2 halves/doubles even extents
exactly), GDN / inverse GDN, LayerNorm over token channels, two-layer MLP,
plus the Parameter/Module containers everything hangs off.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor


class Parameter(Tensor):
    """A leaf tensor updated by the optimizer."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    """Container with recursive parameter discovery."""

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{full}.{i}", item

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


# ---------------------------------------------------------------------------
# raw conv kernels (numpy, wrapped as tape ops below)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """(N,C,H,W) -> (N, Ho*Wo, C*k*k) patch matrix."""
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    n, c, hp, wp = xp.shape
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    sn, sc, sh, sw = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, (n, ho, wo, c, k, k), (sn, sh * s, sw * s, sc, sh, sw)
    )
    return np.ascontiguousarray(cols).reshape(n, ho * wo, c * k * k), ho, wo


def _conv_forward(x, weight, s, p):
    cout, cin, k, _ = weight.shape
    cols, ho, wo = _im2col(x, k, s, p)
    out = np.matmul(cols, weight.reshape(cout, cin * k * k).T)
    return out.transpose(0, 2, 1).reshape(x.shape[0], cout, ho, wo)


def _conv_input_grad(gy, weight, s, p, h, w):
    """Adjoint of _conv_forward w.r.t. its input, for input size (h, w)."""
    n, cout, ho, wo = gy.shape
    _, cin, k, _ = weight.shape
    gy2 = gy.reshape(n, cout, ho * wo).transpose(0, 2, 1)
    gcols = np.matmul(gy2, weight.reshape(cout, cin * k * k))
    gcols = gcols.reshape(n, ho, wo, cin, k, k)
    gxp = np.zeros((n, cin, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            gxp[:, :, i : i + ho * s : s, j : j + wo * s : s] += gcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return gxp[:, :, p : p + h, p : p + w]


def _conv_weight_grad(x, gy, s, p, kshape):
    cout, cin, k, _ = kshape
    n = x.shape[0]
    cols, ho, wo = _im2col(x, k, s, p)
    gy2 = gy.reshape(n, cout, ho * wo)
    gw = np.einsum("ncp,npk->ck", gy2, cols)
    return gw.reshape(cout, cin, k, k)


def _check_stride2_extents(h, w, s):
    if s == 2 and (h % 2 or w % 2):
        raise ShapeError(
            f"stride-2 convolution requires even extents, got {h}x{w}"
        )


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 1) -> Tensor:
    """Cross-correlation with zero padding; weight is (C_out, C_in, k, k)."""
    n, cin, h, w = x.shape
    if weight.shape[1] != cin:
        raise ShapeError(
            f"conv2d channel mismatch: input {x.shape}, weight {weight.shape}"
        )
    k = weight.shape[2]
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"padded input {h}x{w} smaller than kernel {k}x{k}")
    _check_stride2_extents(h, w, stride)
    out = _conv_forward(x.data, weight.data, stride, padding)
    return Tensor._op(
        out,
        (x, weight),
        (
            lambda g: _conv_input_grad(g, weight.data, stride, padding, h, w),
            lambda g: _conv_weight_grad(x.data, g, stride, padding, weight.shape),
        ),
    )


def conv_transpose2d(
    x: Tensor, weight: Tensor, stride: int = 1, padding: int = 1
) -> Tensor:
    """Transpose (adjoint) convolution; weight is (C_in, C_out, k, k).

    Output spatial extent is exactly stride * input extent (output padding
    chosen accordingly), so s=2 doubles what Conv(3,2) halved.
    """
    n, cin, h, w = x.shape
    if weight.shape[0] != cin:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input {x.shape}, weight {weight.shape}"
        )
    ho, wo = h * stride, w * stride
    out = _conv_input_grad(x.data, weight.data, stride, padding, ho, wo)
    return Tensor._op(
        out,
        (x, weight),
        (
            lambda g: _conv_forward(g, weight.data, stride, padding),
            lambda g: _conv_weight_grad(g, x.data, stride, padding, weight.shape),
        ),
    )


def unfold_patches(x: Tensor, patch: int) -> Tensor:
    """Zero-padded (patch x patch) neighborhood of every spatial position.

    (N, C, H, W) -> (N, H*W, patch*patch, C), neighborhoods in row-major
    raster order both across positions and within a patch.
    """
    n, c, h, w = x.shape
    p = (patch - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
    sn, sc, sh, sw = xp.strides
    view = np.lib.stride_tricks.as_strided(
        xp, (n, h, w, patch, patch, c), (sn, sh, sw, sh, sw, sc)
    )
    out = np.ascontiguousarray(view).reshape(n, h * w, patch * patch, c)

    def grad_fn(g):
        gv = g.reshape(n, h, w, patch, patch, c)
        gxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
        for i in range(patch):
            for j in range(patch):
                gxp[:, :, i : i + h, j : j + w] += gv[:, :, :, i, j, :].transpose(
                    0, 3, 1, 2
                )
        return gxp[:, :, p : p + h, p : p + w]

    return Tensor._op(out, (x,), (grad_fn,))


# ---------------------------------------------------------------------------
# layer modules
# ---------------------------------------------------------------------------


def _kaiming(rng, fan_in, shape):
    return rng.normal(0.0, np.sqrt(1.0 / fan_in), size=shape)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng):
        self.weight = Parameter(_kaiming(rng, in_features, (out_features, in_features)))
        self.bias = Parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight.transpose(1, 0) + self.bias


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, rng, kernel: int = 3, stride: int = 1):
        self.weight = Parameter(
            _kaiming(rng, in_ch * kernel * kernel, (out_ch, in_ch, kernel, kernel))
        )
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = (kernel - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        y = conv2d(x, self.weight, self.stride, self.padding)
        return y + self.bias.reshape(1, -1, 1, 1)


class ConvTranspose2d(Module):
    def __init__(self, in_ch: int, out_ch: int, rng, kernel: int = 3, stride: int = 1):
        self.weight = Parameter(
            _kaiming(rng, in_ch * kernel * kernel, (in_ch, out_ch, kernel, kernel))
        )
        self.bias = Parameter(np.zeros(out_ch))
        self.stride = stride
        self.padding = (kernel - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        y = conv_transpose2d(x, self.weight, self.stride, self.padding)
        return y + self.bias.reshape(1, -1, 1, 1)


class GDN(Module):
    """Generalized divisive normalization, y_c = x_c / sqrt(beta_c + sum_j gamma_cj x_j^2).

    inverse=True multiplies instead (IGDN). Positivity of beta/gamma is kept
    by construction: stored parameters are square roots, so any gradient
    step still yields beta >= beta_min and gamma >= 0.
    """

    BETA_MIN = 1e-6

    def __init__(self, channels: int, inverse: bool = False, gamma_init: float = 0.1):
        self.inverse = inverse
        self.beta_root = Parameter(np.sqrt(np.ones(channels) - self.BETA_MIN))
        self.gamma_root = Parameter(np.sqrt(gamma_init * np.eye(channels)))

    def beta(self) -> Tensor:
        return self.beta_root * self.beta_root + self.BETA_MIN

    def gamma(self) -> Tensor:
        return self.gamma_root * self.gamma_root

    def __call__(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        gamma = self.gamma().reshape(c, c, 1, 1)
        norm = conv2d(x * x, gamma, stride=1, padding=0)
        norm = (norm + self.beta().reshape(1, c, 1, 1)).sqrt()
        return x * norm if self.inverse else x / norm


class LayerNorm(Module):
    """Normalizes each token over its channel axis, then applies affine."""

    EPS = 1e-6

    def __init__(self, channels: int):
        self.gain = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        return xc / (var + self.EPS).sqrt() * self.gain + self.bias


class MLP(Module):
    """Token-wise two-layer perceptron with GELU, hidden = ratio * channels."""

    def __init__(self, channels: int, rng, ratio: float = 4.0, out_channels=None):
        hidden = int(round(channels * ratio))
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, out_channels or channels, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).gelu())
