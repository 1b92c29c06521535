import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CAMTRAP_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "camtrap._kernels",
                    ["src/camtrap/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            language_level=3,
        )

setup(ext_modules=ext_modules)
