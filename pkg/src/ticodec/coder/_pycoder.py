"""Pure-Python range coder (the fallback backend).

Byte-wise renormalizing range coder with 64-bit low / 32-bit range state
and 16-bit probability precision.  The Cython backend in _speedups.pyx
implements the identical state machine; both produce byte-identical
streams for the same inputs.

The symbol interval reaching the top of the CDF absorbs the truncation
remainder of range >> 16, which keeps the coding overhead well under
0.1% plus the constant flush cost.
"""

from __future__ import annotations

import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK32
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self._finished = False

    def _shift_low(self):
        if self.low < 0xFF000000 or self.low > _MASK32:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append((temp + carry) & 0xFF)
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = (self.low >> 24) & 0xFF
        self.cache_size += 1
        self.low = (self.low << 8) & _MASK32

    def _encode(self, start: int, end: int):
        r = self.range >> PRECISION
        self.low += start * r
        if end == TOTAL:
            self.range -= start * r
        else:
            self.range = (end - start) * r
        while self.range < _TOP:
            self.range <<= 8
            self._shift_low()

    def encode_symbol(self, cdf: np.ndarray, symbol: int):
        """cdf: uint32 array of cumulative boundaries, cdf[0]=0, cdf[-1]=2^16."""
        self._encode(int(cdf[symbol]), int(cdf[symbol + 1]))

    def encode_raw16(self, value: int):
        """16 raw bits as two uniformly coded bytes (tail-escape payload)."""
        hi = (value >> 8) & 0xFF
        lo = value & 0xFF
        self._encode(hi << 8, (hi + 1) << 8)
        self._encode(lo << 8, (lo + 1) << 8)

    def finish(self) -> bytes:
        """Terminate with the shortest byte tail that pins the interval."""
        if not self._finished:
            mask = _TOP - 1
            self.low = (self.low + mask) & ~mask
            self._shift_low()
            self._shift_low()
            self._finished = True
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK32
        self.code = 0
        for _ in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32

    def _next_byte(self) -> int:
        if self.pos < len(self.data):
            b = self.data[self.pos]
            self.pos += 1
            return b
        return 0

    def _update(self, start: int, end: int, r: int):
        self.code -= start * r
        if end == TOTAL:
            self.range -= start * r
        else:
            self.range = (end - start) * r
        while self.range < _TOP:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK32
            self.range <<= 8

    def decode_symbol(self, cdf: np.ndarray) -> int:
        r = self.range >> PRECISION
        value = self.code // r
        value = min(max(value, 0), TOTAL - 1)
        symbol = int(np.searchsorted(cdf, value, side="right")) - 1
        self._update(int(cdf[symbol]), int(cdf[symbol + 1]), r)
        return symbol

    def decode_raw16(self) -> int:
        value = 0
        for _ in range(2):
            r = self.range >> PRECISION
            v = self.code // r
            if v >= TOTAL:
                v = TOTAL - 1
            byte = v >> 8
            self._update(byte << 8, (byte + 1) << 8, r)
            value = (value << 8) | byte
        return value
