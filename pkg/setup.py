"""Builds the optional compiled kernels.

The package works without them (a numpy fallback is selected at import);
building just makes training noticeably faster. -ffast-math lets the
compiler vectorize the exp/tanh loops through libmvec; the kernels keep
their gate inputs in ranges where that is value-safe.
"""

import os

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    flags = ["-O3", "-ffast-math"]
    if os.environ.get("UPLM_PORTABLE") != "1":
        flags.append("-march=native")
    ext_modules = cythonize(
        [
            Extension(
                "uplm.kernels._speedups",
                ["src/uplm/kernels/_speedups.pyx"],
                extra_compile_args=flags,
                # -ffast-math emits calls into glibc's vector math library
                extra_link_args=["-lmvec", "-lm"],
            )
        ],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False},
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
