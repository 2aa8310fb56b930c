import os

import numpy as np
from setuptools import Extension, setup

# SSGRASP_PURE=1 skips the compiled core; the package then runs on the numpy fallback.
ext_modules = []
if not os.environ.get("SSGRASP_PURE"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "ssgrasp._ckernels",
                ["src/ssgrasp/_ckernels.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
