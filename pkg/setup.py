"""Builds the optional Cython range-coder extension.

The package works without it; ticodec.coder falls back to the pure-Python
implementation when the extension is missing.
"""
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ticodec.coder._speedups",
                sources=["src/ticodec/coder/_speedups.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
