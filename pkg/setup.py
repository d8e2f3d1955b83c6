"""Build the optional compiled scoring kernel.

The package works without it (pure-Python fallback is selected at import);
a failed extension build therefore must not fail the install.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "pmfr._kernels._scoring",
                ["src/pmfr/_kernels/_scoring.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
