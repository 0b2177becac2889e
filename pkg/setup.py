"""Builds the optional compiled kernel extension.

If Cython or a C compiler is missing the build falls back to a pure
python install; the package selects the numpy backend at import time.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("modnmt._kernels._fast",
                   ["src/modnmt/_kernels/_fast.pyx"])],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
