"""Build script: compiles the native tracking kernel when Cython is available.

The package works without the extension (a numpy fallback is selected at
import time), so a failed or skipped compile degrades gracefully instead of
breaking the install.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "shapetrack._kernels._native",
                sources=["src/shapetrack/_kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
