import os

from setuptools import setup

ext_modules = []
if not os.environ.get("EEGRAV_NO_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "eegrav._core",
                    ["src/eegrav/_core.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # no Cython at build time: the pure-Python kernels are used
        ext_modules = []

setup(ext_modules=ext_modules)
