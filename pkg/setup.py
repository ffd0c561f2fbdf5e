import numpy
from setuptools import Extension, setup
from Cython.Build import cythonize

extensions = [
    Extension(
        "deepboard.kernels._render",
        ["src/deepboard/kernels/_render.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # no FMA contraction: sample positions must round exactly like the
        # pure NumPy kernels so both backends pick the same cells
        extra_compile_args=["-ffp-contract=off"],
    )
]

setup(
    ext_modules=cythonize(
        extensions, compiler_directives={"language_level": 3, "boundscheck": False}
    )
)
