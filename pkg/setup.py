import os

from setuptools import Extension, setup

# The compiled kernel is optional: hiq.flownet falls back to a pure-Python
# solver when the extension is missing.
ext_modules = []
if not os.environ.get("HIQ_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "hiq._mcf",
                    ["src/hiq/_mcf.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
