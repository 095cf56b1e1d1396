"""Select the path kernels at import time.

The compiled ``_kernels_c`` is used when it was built; ``STOPOU_PURE_PYTHON=1``
forces the numpy fallback. :func:`use_backend` switches at runtime (tests and
the benchmark compare both).
"""

import os

from . import _kernels_py

try:
    from . import _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

_ACTIVE = _kernels_py if (_kernels_c is None or os.environ.get("STOPOU_PURE_PYTHON") == "1") else _kernels_c


def compiled_available() -> bool:
    return _kernels_c is not None


def backend_name() -> str:
    return "cython" if _ACTIVE is _kernels_c else "python"


def use_backend(name: str) -> None:
    global _ACTIVE
    if name == "python":
        _ACTIVE = _kernels_py
    elif name == "cython":
        if _kernels_c is None:
            raise RuntimeError("compiled kernels are not built")
        _ACTIVE = _kernels_c
    else:
        raise ValueError(f"unknown backend {name!r}")


def kernels():
    return _ACTIVE
