import glob
import os

import pybind11
from setuptools import Extension, setup

eigen = os.environ.get("EIGEN3_INCLUDE_DIR", "/usr/include/eigen3")

ext = Extension(
    "tdom._tdom",
    sources=sorted(glob.glob("src/*.cpp")) + ["python/module.cpp"],
    include_dirs=["include", "vendor", eigen, pybind11.get_include()],
    extra_compile_args=["-std=c++20", "-O2"],
)

setup(ext_modules=[ext])
