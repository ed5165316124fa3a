"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a pure numpy
fallback is selected at import time), so any build failure here only
costs speed, never correctness.
"""

import sys

from setuptools import Extension, setup


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print("setup.py: Cython not available, skipping compiled kernels",
              file=sys.stderr)
        return []
    ext = Extension(
        "dpsqkd.kernels._ckernels",
        sources=["src/dpsqkd/kernels/_ckernels.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions())
