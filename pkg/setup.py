import os

import numpy as np
from setuptools import Extension, setup

# The extension is optional: a failed build leaves the numpy fallback in place.
try:
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("SSCALIB_NO_EXT"):
    ext_modules = cythonize(
        [Extension(
            "sscalib._spectrum_core",
            ["src/sscalib/_spectrum_core.pyx"],
            include_dirs=[np.get_include()],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            extra_compile_args=["-O3", "-ffp-contract=off"],
        )],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
