"""Kernel backend selection.

The compiled Cython extension is preferred when it imported cleanly; the
pure-numpy fallback is numerically equivalent. Set ``MTSURV_PURE_PYTHON=1``
to force the fallback (used by the benchmark and the backend-parity tests).
"""

import os

from . import _fallback

if os.environ.get("MTSURV_PURE_PYTHON"):
    _impl = _fallback
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND: str = _impl.BACKEND
transition_loglik = _impl.transition_loglik
solve_conditional_times = _impl.solve_conditional_times


def get_backends():
    """All importable backends, keyed by name (for benchmarks/tests)."""
    backends = {"python": _fallback}
    try:
        from . import _core

        backends["compiled"] = _core
    except ImportError:
        pass
    return backends
