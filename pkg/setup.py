"""Builds the optional compiled network kernel.

If Cython or a C compiler is unavailable the package still installs and the
pure-Python kernel is used instead.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("DAGBAB_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("dagbab._netkernel", ["src/dagbab/_netkernel.pyx"],
                       extra_compile_args=["-O2"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
