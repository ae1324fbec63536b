"""Build script for the optional compiled beam-search kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure to compile is downgraded to a warning.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Build the Cython kernel if possible, otherwise install pure-Python."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or Cython missing
            warnings.warn(f"compiled kernel skipped ({exc}); "
                          "falling back to pure NumPy at runtime")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernel {ext.name} skipped ({exc})")


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        ["src/binaural_masking/_kernels/_beam.pyx"],
        compiler_directives={"language_level": 3},
        include_path=[numpy.get_include()],
    )


try:
    import numpy

    include_dirs = [numpy.get_include()]
except ImportError:
    include_dirs = []

setup(
    ext_modules=extensions(),
    include_dirs=include_dirs,
    cmdclass={"build_ext": OptionalBuildExt},
)
