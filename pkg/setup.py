"""Build script for the compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time), but the compiled core is strongly recommended for training
and long simulations.  Build in place with:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

from Cython.Build import cythonize

extensions = [
    Extension(
        name="tprec._kernels._core",
        sources=["src/tprec/_kernels/_core.pyx"],
    ),
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    ),
)
