import glob
import os

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup


def eigen_include():
    for candidate in (os.environ.get("EIGEN3_INCLUDE_DIR"),
                      "/usr/include/eigen3", "/usr/local/include/eigen3"):
        if candidate and os.path.isdir(candidate):
            return candidate
    raise RuntimeError("Eigen 3 headers not found; set EIGEN3_INCLUDE_DIR")


ext = Pybind11Extension(
    "_pscene",
    sorted(glob.glob("src/*.cpp")) + ["bindings/module.cpp"],
    include_dirs=["include", eigen_include()],
    cxx_std=20,
)

setup(ext_modules=[ext], cmdclass={"build_ext": build_ext})
