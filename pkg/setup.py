from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# The compiled kernel core is optional: if no compiler (or no Cython) is
# available the package falls back to the pure-numpy kernels at import time.
ext_modules = []
if cythonize is not None:
    ext = Extension(
        "prunelab.kernels._corex",
        ["src/prunelab/kernels/_corex.pyx"],
        extra_compile_args=["-O3"],
        optional=True,
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
