"""Build script: compiles the optional simulation kernel.

The compiled extension is a pure speed-up; if Cython or a C compiler is
unavailable the build still succeeds and the package falls back to the
pure-Python kernel at import time.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that degrades to the pure-Python fallback on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            f"WARNING: compiled simulation kernel not built ({exc}); "
            "the pure-Python kernel will be used instead.",
            file=sys.stderr,
        )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        print(
            "WARNING: Cython not available; building without the compiled "
            "simulation kernel.",
            file=sys.stderr,
        )
        return []
    ext = Extension(
        "remest._simcore",
        ["src/remest/_simcore.pyx"],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": optional_build_ext})
