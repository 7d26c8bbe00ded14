"""Kernel selection: compiled extension when available, pure Python otherwise.

Set ``EXDES_PURE_KERNEL=1`` to force the fallback (the benchmark and the
parity tests use this). Both kernels are bit-identical by construction.
"""

import os

if os.environ.get("EXDES_PURE_KERNEL") == "1":
    from . import _kernel_py as _impl
else:
    try:
        from . import _kernel as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernel_py as _impl

run_thermal = _impl.run_thermal


def backend_name() -> str:
    return _impl.BACKEND
