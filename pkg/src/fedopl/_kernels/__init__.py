"""SGD kernel backend selection.

Prefers the compiled Cython kernel; falls back to the pure-Python twin when
the extension is unavailable or when FEDOPL_PURE_PYTHON=1 is set. Both
backends implement the same operation order and produce bit-identical
results (tests/test_kernels.py asserts this whenever both are importable).
"""

from __future__ import annotations

import os

from ._sgd_py import sgd_run as _sgd_run_py

if os.environ.get("FEDOPL_PURE_PYTHON", "") == "1":
    sgd_run = _sgd_run_py
    BACKEND = "python"
else:
    try:
        from ._sgd_cy import sgd_run  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        sgd_run = _sgd_run_py
        BACKEND = "python"

__all__ = ["sgd_run", "BACKEND"]
