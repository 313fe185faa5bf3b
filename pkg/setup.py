import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "stuttergate._latticext",
                ["src/stuttergate/_latticext.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-python lattice fallback is selected at import time, so the
    # package still works without the compiled extension.
    ext_modules = []

setup(ext_modules=ext_modules)
