"""Build script for the optional compiled sampling core.

If Cython (or a C compiler) is unavailable the extension is simply skipped
and the package falls back to the pure-numpy kernels at import time.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "lowrank._sampling_core",
                ["src/lowrank/_sampling_core.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
