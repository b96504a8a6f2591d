import os

import numpy as np
from setuptools import Extension, setup

# DSVS_NO_EXT=1 installs the pure-Python fallback only.
ext_modules = []
if not os.environ.get("DSVS_NO_EXT"):
    from Cython.Build import cythonize

    extensions = [
        Extension(
            "dsvs._ckernels",
            ["src/dsvs/_ckernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )
    ]
    ext_modules = cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )

setup(ext_modules=ext_modules)
