import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "asymseg._ckernels",
        ["src/asymseg/_ckernels.pyx"],
        include_dirs=[np.get_include(), "src/asymseg"],
        extra_compile_args=["-O3", "-march=native", "-mprefer-vector-width=512"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        # a failed compile leaves the numpy fallback in charge
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
