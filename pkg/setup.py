# python setup.py build_ext --inplace
# The compiled kernels are optional: without Cython or a C compiler the
# package installs pure-Python and attireguard.kernels falls back to numpy.
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("ATTIREGUARD_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "attireguard._ckernels",
                    ["src/attireguard/_ckernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
