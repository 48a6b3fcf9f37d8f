"""Build script: compiles the optional Cython feasibility kernel.

If Cython or a C compiler is unavailable the package still installs; the
pure-numpy fallback kernel is selected at import time.
"""
from setuptools import setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "kinothrow.kernels._speed",
                ["src/kinothrow/kernels/_speed.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"skipping compiled kernel ({exc}); pure-python fallback will be used")

setup(ext_modules=ext_modules)
