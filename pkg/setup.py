import sys

from setuptools import setup

# The thermal stepping kernel is compiled with Cython when possible. If the
# toolchain is unavailable the package still installs and falls back to the
# pure-Python kernel at import time (see exdes.sim.kernel).
ext_modules = []
try:
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "exdes.sim._kernel",
                ["src/exdes/sim/_kernel.pyx"],
                # -ffp-contract=off keeps the C arithmetic bit-identical to
                # the pure-Python kernel (no FMA contraction).
                extra_compile_args=["-O2", "-ffp-contract=off"],
            )
        ],
        language_level="3",
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    sys.stderr.write(f"exdes: building without compiled kernel ({exc})\n")

setup(ext_modules=ext_modules)
