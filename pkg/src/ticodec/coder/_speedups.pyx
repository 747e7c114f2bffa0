# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython range coder backend; state machine identical to _pycoder."""

DEF PRECISION = 16
DEF TOTAL = 65536
DEF TOP = 16777216

PRECISION_PY = PRECISION
TOTAL_PY = TOTAL


cdef class RangeEncoder:
    cdef unsigned long long low
    cdef unsigned long long range_
    cdef unsigned int cache
    cdef unsigned long long cache_size
    cdef bytearray out
    cdef bint _finished

    def __init__(self):
        self.low = 0
        self.range_ = 0xFFFFFFFF
        self.cache = 0
        self.cache_size = 1
        self.out = bytearray()
        self._finished = False

    cdef void _shift_low(self):
        cdef unsigned long long carry
        cdef unsigned int temp
        if self.low < 0xFF000000u or self.low > 0xFFFFFFFFu:
            carry = self.low >> 32
            temp = self.cache
            while True:
                self.out.append(<unsigned char>((temp + carry) & 0xFF))
                temp = 0xFF
                self.cache_size -= 1
                if self.cache_size == 0:
                    break
            self.cache = <unsigned int>((self.low >> 24) & 0xFF)
        self.cache_size += 1
        self.low = (self.low << 8) & 0xFFFFFFFFu

    cdef void _encode_c(self, unsigned long long start, unsigned long long end):
        cdef unsigned long long r = self.range_ >> PRECISION
        self.low += start * r
        if end == TOTAL:
            self.range_ -= start * r
        else:
            self.range_ = (end - start) * r
        while self.range_ < TOP:
            self.range_ <<= 8
            self._shift_low()

    def encode_symbol(self, unsigned int[:] cdf, Py_ssize_t symbol):
        self._encode_c(cdf[symbol], cdf[symbol + 1])

    def encode_raw16(self, unsigned int value):
        cdef unsigned int hi = (value >> 8) & 0xFF
        cdef unsigned int lo = value & 0xFF
        self._encode_c(hi << 8, (hi + 1) << 8)
        self._encode_c(lo << 8, (lo + 1) << 8)

    def finish(self):
        if not self._finished:
            self.low = (self.low + TOP - 1) & ~<unsigned long long>(TOP - 1)
            self._shift_low()
            self._shift_low()
            self._finished = True
        return bytes(self.out)


cdef class RangeDecoder:
    cdef bytes data
    cdef Py_ssize_t pos
    cdef Py_ssize_t length
    cdef unsigned long long range_
    cdef unsigned long long code

    def __init__(self, bytes data):
        cdef int i
        self.data = data
        self.length = len(data)
        self.pos = 0
        self.range_ = 0xFFFFFFFF
        self.code = 0
        for i in range(5):
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFFu

    cdef unsigned int _next_byte(self):
        cdef unsigned int b
        if self.pos < self.length:
            b = <unsigned char>self.data[self.pos]
            self.pos += 1
            return b
        return 0

    cdef void _update(self, unsigned long long start, unsigned long long end,
                      unsigned long long r):
        self.code -= start * r
        if end == TOTAL:
            self.range_ -= start * r
        else:
            self.range_ = (end - start) * r
        while self.range_ < TOP:
            self.code = ((self.code << 8) | self._next_byte()) & 0xFFFFFFFFu
            self.range_ <<= 8

    def decode_symbol(self, unsigned int[:] cdf):
        cdef unsigned long long r = self.range_ >> PRECISION
        cdef unsigned long long value = self.code / r
        cdef Py_ssize_t lo = 0, hi = cdf.shape[0] - 1, mid
        if value >= TOTAL:
            value = TOTAL - 1
        # find symbol s with cdf[s] <= value < cdf[s+1]
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if cdf[mid] <= value:
                lo = mid
            else:
                hi = mid
        self._update(cdf[lo], cdf[lo + 1], r)
        return lo

    def decode_raw16(self):
        cdef unsigned int value = 0
        cdef unsigned long long r, v
        cdef unsigned int byte
        cdef int i
        for i in range(2):
            r = self.range_ >> PRECISION
            v = self.code / r
            if v >= TOTAL:
                v = TOTAL - 1
            byte = <unsigned int>(v >> 8)
            self._update(byte << 8, (byte + 1) << 8, r)
            value = (value << 8) | byte
        return value
