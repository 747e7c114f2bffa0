"""The four VAE coders and their configuration.

Main encoder: initial strided conv, then NTU stages (attention blocks
followed by a strided conv), GDN after every conv except the linear
bottleneck.  Main decoder mirrors with transpose convs and IGDN.  The
hyper pair does the same at window 4 with LeakyReLU activations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib

import numpy as np

from .entropy import SIGMA_MIN, CausalAttention, FactorizedPrior, gaussian_bits, quantize
from .layers import GDN, Conv2d, ConvTranspose2d, Module
from .swin import SwinBlock
from .tensor import ShapeError, Tensor

LAMBDA_LADDER = (0.0018, 0.0035, 0.0067, 0.013, 0.025, 0.0483, 0.0932, 0.18)


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    channels: int = 128
    lam: float = 0.013
    main_window: int = 8
    hyper_window: int = 4
    main_heads: tuple = (4, 8, 16)
    hyper_heads: tuple = (16, 16)
    main_stbs: tuple = (1, 1, 1)
    hyper_stbs: tuple = (1, 1)
    context_patch: int = 5
    mlp_ratio: float = 4.0
    cam_dim: int | None = None
    sigma_min: float = SIGMA_MIN

    def __post_init__(self):
        if len(self.main_heads) != len(self.main_stbs):
            raise ValueError("main_heads must match main_stbs in length")
        if len(self.hyper_heads) != len(self.hyper_stbs):
            raise ValueError("hyper_heads must match hyper_stbs in length")

    @property
    def main_factor(self) -> int:
        return 2 ** (1 + len(self.main_stbs))

    @property
    def hyper_factor(self) -> int:
        return 2 ** len(self.hyper_stbs)

    @property
    def total_factor(self) -> int:
        return self.main_factor * self.hyper_factor

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        for key in ("main_heads", "hyper_heads", "main_stbs", "hyper_stbs"):
            raw[key] = tuple(raw[key])
        return cls(**raw)

    def config_id(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()[:8]


def _ladder_presets() -> dict:
    presets = {}
    for i, lam in enumerate(LAMBDA_LADDER):
        channels = 128 if i < 4 else 192
        presets[f"tic-{channels}-q{i + 1}"] = ModelConfig(channels=channels, lam=lam)
        presets[f"ticplus-{channels}-q{i + 1}"] = ModelConfig(
            channels=channels, lam=lam, main_stbs=(1, 2, 3)
        )
    return presets


PRESETS = _ladder_presets()


class MainEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        c = cfg.channels
        self.conv_in = Conv2d(3, c, rng, stride=2)
        self.gdn_in = GDN(c)
        self.stages = []
        last = len(cfg.main_stbs) - 1
        for i, depth in enumerate(cfg.main_stbs):
            blocks = [
                SwinBlock(c, cfg.main_heads[i], cfg.main_window, rng, 1, cfg.mlp_ratio)
                for _ in range(depth)
            ]
            conv = Conv2d(c, c, rng, stride=2)
            gdn = GDN(c) if i < last else None
            self.stages.append(_Stage(blocks, conv, gdn))

    def __call__(self, x: Tensor) -> Tensor:
        y = self.gdn_in(self.conv_in(x))
        for stage in self.stages:
            y = stage(y)
        return y


class _Stage(Module):
    def __init__(self, blocks, conv, act):
        self.blocks = blocks
        self.conv = conv
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        x = self.conv(x)
        if self.act is not None:
            x = self.act(x)
        return x


class _LeakyReLU(Module):
    def __call__(self, x: Tensor) -> Tensor:
        return x.leaky_relu(0.01)


class MainDecoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        c = cfg.channels
        self.stages = []
        for i in reversed(range(len(cfg.main_stbs))):
            blocks = [
                SwinBlock(c, cfg.main_heads[i], cfg.main_window, rng, 1, cfg.mlp_ratio)
                for _ in range(cfg.main_stbs[i])
            ]
            tconv = ConvTranspose2d(c, c, rng, stride=2)
            self.stages.append(_UpStage(blocks, tconv, GDN(c, inverse=True)))
        self.tconv_out = ConvTranspose2d(c, 3, rng, stride=2)

    def __call__(self, y: Tensor) -> Tensor:
        x = y
        for stage in self.stages:
            x = stage(x)
        return self.tconv_out(x)


class _UpStage(Module):
    def __init__(self, blocks, tconv, act):
        self.blocks = blocks
        self.tconv = tconv
        self.act = act

    def __call__(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        x = self.tconv(x)
        if self.act is not None:
            x = self.act(x)
        return x


class HyperEncoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        c = cfg.channels
        self.stages = []
        last = len(cfg.hyper_stbs) - 1
        for i, depth in enumerate(cfg.hyper_stbs):
            blocks = [
                SwinBlock(c, cfg.hyper_heads[i], cfg.hyper_window, rng, 1, cfg.mlp_ratio)
                for _ in range(depth)
            ]
            conv = Conv2d(c, c, rng, stride=2)
            act = None if i == last else _LeakyReLU()
            self.stages.append(_Stage(blocks, conv, act))

    def __call__(self, y: Tensor) -> Tensor:
        z = y
        for stage in self.stages:
            z = stage(z)
        return z


class HyperDecoder(Module):
    """Mirrors the hyper encoder; emits 2C channels of entropy features."""

    def __init__(self, cfg: ModelConfig, rng):
        c = cfg.channels
        self.stages = []
        for i in reversed(range(len(cfg.hyper_stbs))):
            blocks = [
                SwinBlock(c, cfg.hyper_heads[i], cfg.hyper_window, rng, 1, cfg.mlp_ratio)
                for _ in range(cfg.hyper_stbs[i])
            ]
            out_ch = 2 * c if i == 0 else c
            tconv = ConvTranspose2d(c, out_ch, rng, stride=2)
            act = None if i == 0 else _LeakyReLU()
            self.stages.append(_UpStage(blocks, tconv, act))

    def __call__(self, z_hat: Tensor) -> Tensor:
        h = z_hat
        for stage in self.stages:
            h = stage(h)
        return h


class TICModel(Module):
    """Full codec: transforms, factorized prior, causal context model."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.g_a = MainEncoder(cfg, rng)
        self.g_s = MainDecoder(cfg, rng)
        self.h_a = HyperEncoder(cfg, rng)
        self.h_s = HyperDecoder(cfg, rng)
        self.prior = FactorizedPrior(cfg.channels)
        self.cam = CausalAttention(
            cfg.channels,
            2 * cfg.channels,
            rng,
            patch=cfg.context_patch,
            dim=cfg.cam_dim,
            sigma_min=cfg.sigma_min,
        )

    def check_input(self, x: Tensor) -> None:
        n, c, h, w = x.shape
        f = self.cfg.total_factor
        if c != 3:
            raise ShapeError(f"expected 3 input channels, got {c}")
        if h % f or w % f:
            raise ShapeError(
                f"input extents {h}x{w} must be multiples of {f}; pad at the boundary"
            )

    def forward_training(self, x: Tensor, rng) -> dict:
        """Noise-quantized forward pass; returns reconstruction and rate terms."""
        self.check_input(x)
        y = self.g_a(x)
        z = self.h_a(y)
        z_hat = quantize(z, "noise", rng=rng)
        hyper = self.h_s(z_hat)
        y_hat = quantize(y, "noise", rng=rng)
        mu, sigma = self.cam(y_hat, hyper)
        return {
            "x_hat": self.g_s(y_hat),
            "bits_y": gaussian_bits(y_hat, mu, sigma),
            "bits_z": self.prior.bits(z_hat),
            "y": y,
            "z": z,
        }


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: TICModel) -> None:
    """npz container: config json, named parameter blobs, content checksum."""
    named = dict(model.named_parameters())
    crc = 0
    for name in sorted(named):
        crc = zlib.crc32(named[name].data.tobytes(), crc)
    arrays = {f"param:{k}": v.data for k, v in named.items()}
    arrays["config"] = np.frombuffer(model.cfg.to_json().encode(), dtype=np.uint8)
    arrays["checksum"] = np.array([crc], dtype=np.uint64)
    np.savez(path, **arrays)


def load_checkpoint(path) -> TICModel:
    try:
        archive = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "config" not in archive:
        raise CheckpointError(f"{path} is not a ticodec checkpoint")
    cfg = ModelConfig.from_json(bytes(archive["config"]).decode())
    model = TICModel(cfg)
    named = dict(model.named_parameters())
    stored = {k[len("param:") :]: archive[k] for k in archive.files if k.startswith("param:")}
    if set(stored) != set(named):
        missing = set(named) ^ set(stored)
        raise CheckpointError(f"parameter name mismatch: {sorted(missing)[:5]}")
    crc = 0
    for name in sorted(stored):
        if stored[name].shape != named[name].shape:
            raise CheckpointError(
                f"shape mismatch for {name}: "
                f"{stored[name].shape} vs {named[name].shape}"
            )
        named[name].data = np.ascontiguousarray(stored[name], dtype=np.float64)
        crc = zlib.crc32(named[name].data.tobytes(), crc)
    if crc != int(archive["checksum"][0]):
        raise CheckpointError("checkpoint checksum mismatch")
    return model
