"""Build script: compiles the optional fast policy kernels.

The extension is a speedup only; if Cython or a C compiler is missing the
package installs anyway and falls back to the numpy implementation at import.
"""

from setuptools import Extension, setup


def extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    return cythonize(
        [
            Extension(
                "policydiff._ckernels",
                ["src/policydiff/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=extensions())
