"""Throughput comparison of the compiled and pure-Python range coders.

Usage: python3 benchmarks/bench_coder.py [num_symbols]
"""

import sys
import time

import numpy as np

from ticodec.coder import (
    BACKEND,
    PyRangeDecoder,
    PyRangeEncoder,
    RangeDecoder,
    RangeEncoder,
    quantize_cdf,
)


def bench(enc_cls, dec_cls, cdf, symbols):
    t0 = time.perf_counter()
    enc = enc_cls()
    for s in symbols:
        enc.encode_symbol(cdf, s)
    data = enc.finish()
    t_enc = time.perf_counter() - t0

    t0 = time.perf_counter()
    dec = dec_cls(data)
    out = [dec.decode_symbol(cdf) for _ in symbols]
    t_dec = time.perf_counter() - t0
    assert out == symbols
    return t_enc, t_dec, len(data)


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 200_000
    rng = np.random.default_rng(np.random.PCG64(0))
    p = np.array([0.32, 0.22, 0.16, 0.11, 0.08, 0.05, 0.04, 0.02])
    cdf = quantize_cdf(p)
    symbols = rng.choice(8, size=n, p=p).tolist()
    ideal = -n * float((p * np.log2(p)).sum()) / 8

    print(f"{n} symbols, ideal size {ideal:.0f} bytes")
    rows = [("python", PyRangeEncoder, PyRangeDecoder)]
    if BACKEND == "cython":
        rows.insert(0, ("cython", RangeEncoder, RangeDecoder))
    results = {}
    for name, enc_cls, dec_cls in rows:
        t_enc, t_dec, size = bench(enc_cls, dec_cls, cdf, symbols)
        results[name] = (t_enc, t_dec)
        print(
            f"{name:>7}: encode {n / t_enc / 1e6:6.2f} Msym/s   "
            f"decode {n / t_dec / 1e6:6.2f} Msym/s   {size} bytes"
        )
    if "cython" in results:
        pe, pd = results["python"]
        ce, cd = results["cython"]
        print(f"speedup: encode {pe / ce:.1f}x, decode {pd / cd:.1f}x")
    else:
        print("compiled backend unavailable; measured pure Python only")


if __name__ == "__main__":
    main()
