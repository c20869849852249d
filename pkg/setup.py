from setuptools import Extension, setup

# The compiled kernels are optional: the package falls back to a pure
# NumPy implementation when the extension is missing (see
# voice2face.backend). Build it whenever Cython is available.
try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "voice2face._convkernels",
                ["src/voice2face/_convkernels.pyx"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
