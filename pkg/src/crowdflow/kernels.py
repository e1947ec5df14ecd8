"""Backend selection for the Uzawa kernel.

The compiled Cython core is used when importable; otherwise the pure-NumPy
fallback takes over. ``CROWDFLOW_PURE_PYTHON=1`` forces the fallback, which
is handy for debugging and for the benchmark that compares both.
"""

from __future__ import annotations

import os

from . import uzawa_fallback

STATUS_CONVERGED = uzawa_fallback.STATUS_CONVERGED
STATUS_MAX_ITER = uzawa_fallback.STATUS_MAX_ITER
STATUS_DIVERGED = uzawa_fallback.STATUS_DIVERGED

uzawa_csr_python = uzawa_fallback.uzawa_csr

_force_pure = os.environ.get("CROWDFLOW_PURE_PYTHON", "").lower() in ("1", "true", "yes")
uzawa_csr_compiled = None
if not _force_pure:
    try:
        from . import _uzawa

        uzawa_csr_compiled = _uzawa.uzawa_csr
    except ImportError:
        uzawa_csr_compiled = None

HAVE_COMPILED = uzawa_csr_compiled is not None
uzawa_csr = uzawa_csr_compiled if HAVE_COMPILED else uzawa_csr_python


def backend_name() -> str:
    return "compiled" if HAVE_COMPILED else "python"
