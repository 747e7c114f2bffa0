"""Bitstream container and full-image entropy coding.

Layout (little-endian, byte-aligned; see docs/format.md):

    magic  "TIC\\x01" | version u8 | config id 8B | H u16 | W u16
    | L_y u16 | L_z u16 | len(z) u32 | z bytes | len(y) u32 | y bytes
    | crc32 u32 over everything before it

The hyper-latent goes first under the factorized prior; the decoder then
runs the hyper decoder and reconstructs the main latent serially in raster
order, recomputing the context prediction per position from already
decoded symbols.  Symbol order is position-major, channel-minor at both
ends.  (mu, sigma) are cast to float32 and rounded to a 1/256 grid before
CDF construction so encoder and decoder build identical tables.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np
from scipy.special import ndtr

from .coder import PRECISION, RangeDecoder, RangeEncoder, quantize_cdf
from .entropy import SIGMA_MIN
from .model import TICModel
from .tensor import Tensor, no_grad

MAGIC = b"TIC\x01"
VERSION = 1
_RAW_OFFSET = 1 << 15
_GRID = 256.0
# smallest grid point not below SIGMA_MIN
_SIGMA_FLOOR = np.ceil(SIGMA_MIN * _GRID) / _GRID


class BitstreamError(RuntimeError):
    pass


def _grid_round(values: np.ndarray) -> np.ndarray:
    """float64 -> float32 -> nearest multiple of 1/256, as float64."""
    return np.rint(np.float64(np.float32(values)) * _GRID) / _GRID


def gaussian_pmf(sigma: float, bound: int):
    """pmf over symbols [-bound, bound] for a zero-mean unit-bin Gaussian."""
    ks = np.arange(-bound, bound + 1, dtype=np.float64)
    pmf = ndtr((ks + 0.5) / sigma) - ndtr((ks - 0.5) / sigma)
    tail = ndtr((-bound - 0.5) / sigma) + 1.0 - ndtr((bound + 0.5) / sigma)
    return pmf, tail


def encode_symbols(enc: RangeEncoder, symbols, cdfs, bound: int) -> None:
    """Code integer symbols; values outside [-bound, bound] take the escape."""
    escape = 2 * bound + 1
    for s, cdf in zip(symbols, cdfs):
        if -bound <= s <= bound:
            enc.encode_symbol(cdf, int(s) + bound)
        else:
            enc.encode_symbol(cdf, escape)
            enc.encode_raw16(int(np.clip(s + _RAW_OFFSET, 0, 0xFFFF)))


def decode_symbols(dec: RangeDecoder, cdfs, bound: int) -> list:
    escape = 2 * bound + 1
    out = []
    for cdf in cdfs:
        s = dec.decode_symbol(cdf)
        if s == escape:
            out.append(dec.decode_raw16() - _RAW_OFFSET)
        else:
            out.append(s - bound)
    return out


class _SigmaCdfCache:
    """Quantized CDFs keyed by the integer grid index of sigma."""

    def __init__(self, bound: int):
        self.bound = bound
        self._cache: dict[int, np.ndarray] = {}

    def get(self, sigma: float) -> np.ndarray:
        key = int(round(sigma * _GRID))
        cdf = self._cache.get(key)
        if cdf is None:
            pmf, tail = gaussian_pmf(sigma, self.bound)
            cdf = quantize_cdf(pmf, tail)
            self._cache[key] = cdf
        return cdf


def _predict_position(model: TICModel, yhat_pad, hyper, i, j):
    """Grid-rounded (mu, sigma) for position (i, j) from the padded buffer."""
    patch_size = model.cam.patch
    patch = yhat_pad[:, i : i + patch_size, j : j + patch_size]
    patch = np.ascontiguousarray(patch.transpose(1, 2, 0)).reshape(patch_size**2, -1)
    mu, sigma = model.cam.predict_one(patch, hyper[0, :, i, j])
    mu_g = _grid_round(mu)
    sigma_g = np.maximum(_grid_round(sigma), _SIGMA_FLOOR)
    return mu_g, sigma_g


def encode_image_stream(model: TICModel, x: Tensor, orig_hw: tuple) -> tuple:
    """Entropy-code an image already padded to the model's size multiple.

    Returns (stream bytes, info dict with the latents and rate estimates).
    """
    model.check_input(x)
    cfg = model.cfg
    with no_grad():
        y = model.g_a(x)
        z = model.h_a(y)
    z_hat = np.rint(z.data)
    bound_z = max(1, int(np.max(np.abs(z_hat))))
    with no_grad():
        hyper = model.h_s(Tensor(z_hat)).data

    # serial quantization pass over y (the context depends on decoded symbols)
    c, gh, gw = y.shape[1], y.shape[2], y.shape[3]
    pad = (model.cam.patch - 1) // 2
    yhat_pad = np.zeros((c, gh + 2 * pad, gw + 2 * pad))
    symbols = np.zeros((gh, gw, c), dtype=np.int64)
    sigmas = np.zeros((gh, gw, c))
    for i in range(gh):
        for j in range(gw):
            mu_g, sigma_g = _predict_position(model, yhat_pad, hyper, i, j)
            s = np.rint(y.data[0, :, i, j] - mu_g)
            yhat_pad[:, i + pad, j + pad] = s + mu_g
            symbols[i, j] = s.astype(np.int64)
            sigmas[i, j] = sigma_g
    bound_y = max(1, int(np.max(np.abs(symbols))))

    # z segment: factorized prior, per-channel tables
    pmf_z = model.prior.pmf_tables(bound_z)
    cdfs_z = [quantize_cdf(pmf_z[ch, :-1], pmf_z[ch, -1]) for ch in range(c)]
    enc = RangeEncoder()
    zsyms = z_hat[0].transpose(1, 2, 0).reshape(-1).astype(np.int64)
    zcdfs = [cdfs_z[ch] for _ in range(z_hat.shape[2] * z_hat.shape[3]) for ch in range(c)]
    encode_symbols(enc, zsyms, zcdfs, bound_z)
    z_bytes = enc.finish()
    est_bits_z = sum(
        _table_bits(cdf, s, bound_z) for s, cdf in zip(zsyms, zcdfs)
    )

    # y segment
    cache = _SigmaCdfCache(bound_y)
    enc = RangeEncoder()
    ycdfs = [cache.get(s) for s in sigmas.reshape(-1)]
    encode_symbols(enc, symbols.reshape(-1), ycdfs, bound_y)
    y_bytes = enc.finish()
    est_bits_y = sum(
        _table_bits(cdf, s, bound_y)
        for s, cdf in zip(symbols.reshape(-1), ycdfs)
    )

    header = MAGIC + struct.pack(
        "<B8sHHHH",
        VERSION,
        cfg.config_id(),
        orig_hw[0],
        orig_hw[1],
        bound_y,
        bound_z,
    )
    body = (
        header
        + struct.pack("<I", len(z_bytes))
        + z_bytes
        + struct.pack("<I", len(y_bytes))
        + y_bytes
    )
    stream = body + struct.pack("<I", zlib.crc32(body))

    y_hat = yhat_pad[:, pad : pad + gh, pad : pad + gw][None]
    info = {
        "y_hat": y_hat,
        "z_hat": z_hat,
        "est_bits_y": est_bits_y,
        "est_bits_z": est_bits_z,
        "payload_bits": 8 * (len(z_bytes) + len(y_bytes)),
    }
    return stream, info


def _table_bits(cdf: np.ndarray, symbol: int, bound: int) -> float:
    """Ideal code length (bits) of one symbol under its quantized table."""
    if -bound <= symbol <= bound:
        width = int(cdf[symbol + bound + 1]) - int(cdf[symbol + bound])
        return PRECISION - np.log2(width)
    escape_width = int(cdf[-1]) - int(cdf[-2])
    return PRECISION - np.log2(escape_width) + 16.0


def decode_image_stream(model: TICModel, stream: bytes) -> tuple:
    """Inverse of encode_image_stream: returns (y_hat, z_hat, (H, W))."""
    # magic + header (17) + two u32 lengths + trailing crc32
    if len(stream) < len(MAGIC) + 17 + 4 + 4 + 4:
        raise BitstreamError("truncated stream")
    body, (crc,) = stream[:-4], struct.unpack("<I", stream[-4:])
    if zlib.crc32(body) != crc:
        raise BitstreamError("CRC mismatch (corrupted stream)")
    if body[:4] != MAGIC:
        raise BitstreamError("bad magic; not a ticodec stream")
    version, config_id, h, w, bound_y, bound_z = struct.unpack(
        "<B8sHHHH", body[4:21]
    )
    if version != VERSION:
        raise BitstreamError(f"unsupported stream version {version}")
    cfg = model.cfg
    if config_id != cfg.config_id():
        raise BitstreamError("stream was coded with a different model config")
    off = 21
    (zlen,) = struct.unpack("<I", body[off : off + 4])
    off += 4
    z_bytes = body[off : off + zlen]
    off += zlen
    if off + 4 > len(body):
        raise BitstreamError("truncated payload")
    (ylen,) = struct.unpack("<I", body[off : off + 4])
    off += 4
    y_bytes = body[off : off + ylen]
    if len(z_bytes) != zlen or len(y_bytes) != ylen:
        raise BitstreamError("truncated payload")

    f = cfg.total_factor
    ph, pw = -(-h // f) * f, -(-w // f) * f
    gh, gw = ph // cfg.main_factor, pw // cfg.main_factor
    zh, zw = gh // cfg.hyper_factor, gw // cfg.hyper_factor
    c = cfg.channels

    pmf_z = model.prior.pmf_tables(bound_z)
    cdfs_z = [quantize_cdf(pmf_z[ch, :-1], pmf_z[ch, -1]) for ch in range(c)]
    dec = RangeDecoder(z_bytes)
    zcdfs = [cdfs_z[ch] for _ in range(zh * zw) for ch in range(c)]
    zsyms = decode_symbols(dec, zcdfs, bound_z)
    z_hat = (
        np.asarray(zsyms, dtype=np.float64).reshape(zh, zw, c).transpose(2, 0, 1)[None]
    )
    with no_grad():
        hyper = model.h_s(Tensor(z_hat)).data

    pad = (model.cam.patch - 1) // 2
    yhat_pad = np.zeros((c, gh + 2 * pad, gw + 2 * pad))
    cache = _SigmaCdfCache(bound_y)
    dec = RangeDecoder(y_bytes)
    escape = 2 * bound_y + 1
    for i in range(gh):
        for j in range(gw):
            mu_g, sigma_g = _predict_position(model, yhat_pad, hyper, i, j)
            vals = np.empty(c)
            for ch in range(c):
                s = dec.decode_symbol(cache.get(sigma_g[ch]))
                if s == escape:
                    s = dec.decode_raw16() - _RAW_OFFSET
                else:
                    s -= bound_y
                vals[ch] = s
            yhat_pad[:, i + pad, j + pad] = vals + mu_g
    y_hat = yhat_pad[:, pad : pad + gh, pad : pad + gw][None]
    return y_hat, z_hat, (h, w)
