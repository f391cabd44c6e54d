"""Build the optional Cython kernel; the pure-Python fallback is used without it."""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("THUMBGUARD_NO_CYTHON", "") not in ("1", "true", "yes"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(["src/thumbguard/sim/_kernel.pyx"], language_level=3, quiet=True)

setup(ext_modules=ext_modules)
