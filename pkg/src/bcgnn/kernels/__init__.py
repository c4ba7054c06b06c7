"""Hot numeric kernels with a compiled fast path and a pure-numpy fallback.

The compiled Cython extension is used when available; set the environment
variable ``BCGNN_PURE_PYTHON=1`` to force the fallback. Both backends are
bitwise-identical by contract (see ``pykernels`` for the exact semantics;
``benchmarks/bench_kernels.py`` checks equality while timing both).
"""

import logging
import os

from . import pykernels as _py

_log = logging.getLogger(__name__)

if os.environ.get("BCGNN_PURE_PYTHON"):
    _impl = _py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _py
        BACKEND = "python"
        _log.warning("compiled kernels unavailable; using the pure-numpy fallback")

scatter_add_rows = _impl.scatter_add_rows
scatter_add_flat = _impl.scatter_add_flat
segment_sum = _impl.segment_sum
segment_mean = _impl.segment_mean
segment_max = _impl.segment_max


def backend_name():
    """Which kernel backend was selected at import: 'compiled' or 'python'."""
    return BACKEND
