"""Build script for the optional compiled convolution kernel.

The package is fully functional without the extension: qgclosure.convops
falls back to a numpy implementation when qgclosure._convkernel is absent.
Set QGCLOSURE_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("QGCLOSURE_SKIP_EXT") == "1":
        return []
    from Cython.Build import cythonize

    ext = Extension(
        "qgclosure._convkernel",
        sources=["src/qgclosure/_convkernel.pyx"],
        extra_compile_args=["-O3", "-march=native", "-funroll-loops"],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions())
