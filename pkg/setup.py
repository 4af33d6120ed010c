"""Build the optional Cython kernels.

The package works without them: ``ltsf._backend`` falls back to the numpy
implementation in ``ltsf._kernels_py`` when the extension is missing.
"""
import os

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing etc.
            print(f"warning: building ltsf._kernels failed ({exc}); using the numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: building {ext.name} failed ({exc}); using the numpy fallback")


def extensions():
    if os.environ.get("LTSF_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    ext = Extension(
        "ltsf._kernels",
        ["src/ltsf/_kernels.pyx"],
        include_dirs=[np.get_include()],
        # no FMA contraction: results must match the numpy fallback bit for bit
        extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
