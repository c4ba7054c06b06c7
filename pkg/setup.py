"""Builds the optional compiled kernel extension.

The package works without it (a pure-numpy fallback is selected at import
time), but the compiled kernels make training considerably faster.
"""

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "bcgnn.kernels._ckernels",
                ["src/bcgnn/kernels/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
