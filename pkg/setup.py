import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

# optional=True: if no compiler/Cython is available the install still
# succeeds and the package falls back to the pure-NumPy kernels.
extensions = [
    Extension(
        "pbfopt._kernels",
        sources=["src/pbfopt/_kernels.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"})
    if cythonize
    else [],
)
