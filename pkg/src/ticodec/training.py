"""Rate-distortion training: optimizer, loss, metrics, toy data, saliency."""

from __future__ import annotations

import csv

import numpy as np

from .model import TICModel
from .tensor import Tensor


class DivergedError(RuntimeError):
    """A loss term became non-finite during training."""


class Adam:
    """Adam with global-norm gradient clipping."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def grad_norm(self) -> float:
        total = 0.0
        for p in self.params:
            if p.grad is not None:
                total += float(np.sum(p.grad * p.grad))
        return float(np.sqrt(total))

    def step(self) -> float:
        norm = self.grad_norm()
        scale = 1.0
        if self.clip_norm and norm > self.clip_norm:
            scale = self.clip_norm / norm
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad * scale
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / bc1) / (
                np.sqrt(self.v[i] / bc2) + self.eps
            )
        return norm

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def mse(x: Tensor, x_hat: Tensor) -> Tensor:
    d = x - x_hat
    return (d * d).mean()


def rd_loss(x, x_hat, bits_y, bits_z, lam, pixels) -> Tensor:
    """L = bpp + lambda * 255^2 * MSE; pixels counts N*H*W, inputs in [0, 1]."""
    rate = (bits_y + bits_z) * (1.0 / pixels)
    return rate + lam * (255.0**2) * mse(x, x_hat)


def train_step(batch: np.ndarray, model: TICModel, opt: Adam, lam: float, rng) -> dict:
    """One forward/backward/update on a (N,3,H,W) batch in [0, 1]."""
    n, _, h, w = batch.shape
    x = Tensor(batch)
    out = model.forward_training(x, rng)
    for name in ("bits_y", "bits_z"):
        if not np.isfinite(out[name].item()):
            raise DivergedError(f"rate term {name} is non-finite")
    mse_t = mse(x, out["x_hat"])
    if not np.isfinite(mse_t.item()):
        raise DivergedError("distortion term is non-finite")
    loss = rd_loss(x, out["x_hat"], out["bits_y"], out["bits_z"], lam, n * h * w)
    model.zero_grad()
    loss.backward()
    grad_norm = opt.step()
    return {
        "loss": loss.item(),
        "bpp": (out["bits_y"].item() + out["bits_z"].item()) / (n * h * w),
        "mse": mse_t.item() * 255.0**2,
        "grad_norm": grad_norm,
    }


def fit(
    model: TICModel,
    images: np.ndarray,
    steps: int,
    lam: float,
    lr: float = 1e-4,
    batch_size: int = 8,
    seed: int = 0,
    log=None,
) -> list[dict]:
    """Seeded toy training loop over an in-memory image stack."""
    rng = np.random.default_rng(np.random.PCG64(seed))
    opt = Adam(model.parameters(), lr=lr)
    history = []
    for step in range(steps):
        idx = rng.choice(len(images), size=min(batch_size, len(images)), replace=False)
        metrics = train_step(images[idx], model, opt, lam, rng)
        metrics["step"] = step
        history.append(metrics)
        if log:
            log(metrics)
    return history


def write_metrics_csv(path, history: list[dict]) -> None:
    fields = ["step", "loss", "bpp", "mse", "grad_norm"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in history:
            writer.writerow({k: row[k] for k in fields})


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def psnr(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 100."""
    err = float(np.mean((x - x_hat) ** 2))
    if err <= 0.0:
        return 100.0
    return min(10.0 * np.log10(1.0 / err), 100.0)


def bpp(stream_bytes: int, h: int, w: int) -> float:
    """Bits per pixel on the original (pre-padding) dimensions."""
    return 8.0 * stream_bytes / (h * w)


# ---------------------------------------------------------------------------
# synthetic toy data
# ---------------------------------------------------------------------------


def synthetic_images(count: int, size: int, seed: int = 0) -> np.ndarray:
    """Seeded stack of (count, 3, size, size) toy images in [0, 1].

    Cycles through gradients, checkerboards, Gaussian blobs, and noise so a
    toy run sees both smooth and high-frequency content.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    grid = np.linspace(0.0, 1.0, size)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    images = np.empty((count, 3, size, size))
    for i in range(count):
        kind = i % 4
        if kind == 0:
            angle = rng.uniform(0, 2 * np.pi)
            ramp = np.cos(angle) * xx + np.sin(angle) * yy
            ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min() + 1e-12)
            img = np.stack([ramp * rng.uniform(0.5, 1.0) for _ in range(3)])
        elif kind == 1:
            period = int(rng.integers(4, max(5, size // 4)))
            board = ((xx * size // period).astype(int) + (yy * size // period).astype(int)) % 2
            img = np.stack([board * rng.uniform(0.6, 1.0) for _ in range(3)])
        elif kind == 2:
            img = np.zeros((3, size, size))
            for _ in range(int(rng.integers(2, 6))):
                cy, cx = rng.uniform(0, 1, 2)
                s = rng.uniform(0.05, 0.25)
                blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s)))
                img += blob[None] * rng.uniform(0.3, 1.0, (3, 1, 1))
            img = np.clip(img, 0.0, 1.0)
        else:
            img = rng.uniform(0.0, 1.0, (3, size, size))
        images[i] = np.clip(img, 0.0, 1.0)
    return images


# ---------------------------------------------------------------------------
# latent saliency
# ---------------------------------------------------------------------------


def saliency_map(model: TICModel, x: np.ndarray, center: tuple) -> np.ndarray:
    """|d latent(center) / d input| averaged over channels, as an (H, W) map.

    The scalar probed is the channel-averaged main-encoder output at the
    given latent grid position.
    """
    xt = Tensor(x, requires_grad=True)
    y = model.g_a(xt)
    m, n = center
    if not (0 <= m < y.shape[2] and 0 <= n < y.shape[3]):
        raise ValueError(f"center {center} outside latent grid {y.shape[2:]}")
    y[0, :, m, n].mean().backward()
    return np.mean(np.abs(xt.grad[0]), axis=0)
