"""Build script for the optional compiled kernel core.

The package works without the extension (a vectorized numpy fallback is
selected at import time); building it just makes the convolution and
pooling inner loops faster. Any build failure therefore downgrades to a
warning instead of aborting the install.
"""
from setuptools import Extension, setup

try:
    import numpy as np
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext = Extension(
        "crackseg.kernels._core",
        ["src/crackseg/kernels/_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext.optional = True
    ext_modules = cythonize([ext], language_level="3")

setup(ext_modules=ext_modules)
