"""Bit-exact entropy coding of integer symbols against quantized CDFs.

Two interchangeable backends: a compiled Cython state machine
(ticodec.coder._speedups) and a pure-Python fallback, selected at import.
Set TICODEC_PURE_PY=1 to force the fallback.  Both emit byte-identical
streams; benchmarks/bench_coder.py compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

from ._pycoder import PRECISION, TOTAL
from ._pycoder import RangeDecoder as PyRangeDecoder
from ._pycoder import RangeEncoder as PyRangeEncoder

if os.environ.get("TICODEC_PURE_PY"):
    BACKEND = "python"
    RangeEncoder, RangeDecoder = PyRangeEncoder, PyRangeDecoder
else:
    try:
        from ._speedups import RangeDecoder, RangeEncoder

        BACKEND = "cython"
    except ImportError:
        BACKEND = "python"
        RangeEncoder, RangeDecoder = PyRangeEncoder, PyRangeDecoder


def quantize_cdf(pmf, tail_mass: float = 0.0) -> np.ndarray:
    """Quantize a pmf to a strictly increasing 16-bit integer CDF.

    A trailing escape bin (carrying `tail_mass`, used for out-of-range
    symbols) is always appended.  Every bin gets at least 1 LSB; rounding is
    largest-remainder; the result is deterministic in the input bytes.

    Returns a uint32 array c with c[0] = 0, c[-1] = 2^16; bin i spans
    [c[i], c[i+1]); the escape bin is the last one.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.size == 0:
        raise ValueError("empty pmf")
    if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise ValueError("pmf must be finite and nonnegative")
    full = np.append(pmf, max(float(tail_mass), 0.0))
    total = full.sum()
    if total <= 0:
        full = np.ones_like(full)
        total = float(full.size)
    target = full / total * TOTAL
    widths = np.maximum(np.floor(target).astype(np.int64), 1)
    deficit = int(TOTAL - widths.sum())
    if deficit > 0:
        frac = target - np.floor(target)
        order = np.lexsort((np.arange(full.size), -frac))
        for i in range(deficit):
            widths[order[i % full.size]] += 1
    elif deficit < 0:
        # min-1 boosting overshot; take back from the widest bins
        for _ in range(-deficit):
            idx = int(np.argmax(widths))
            if widths[idx] <= 1:
                raise ValueError("pmf has too many bins for 16-bit precision")
            widths[idx] -= 1
    cdf = np.zeros(full.size + 1, dtype=np.uint32)
    cdf[1:] = np.cumsum(widths)
    return cdf


__all__ = [
    "BACKEND",
    "PRECISION",
    "TOTAL",
    "PyRangeDecoder",
    "PyRangeEncoder",
    "RangeDecoder",
    "RangeEncoder",
    "quantize_cdf",
]
