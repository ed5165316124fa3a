"""Hot-kernel backend selection.

The compiled Cython extension is preferred when it built successfully;
otherwise the numpy fallback in ``_pykernels`` is used.  Both produce
bit-identical results.  Set ``DPSQKD_KERNELS=python`` or ``=cython`` to
force a backend (the latter raises if the extension is missing).
``benchmarks/bench_kernels.py`` compares the two.
"""

import os

from . import _pykernels

_forced = os.environ.get("DPSQKD_KERNELS", "").strip().lower()

if _forced == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _pykernels
        BACKEND = "python"

candidate_clicks = _impl.candidate_clicks
dead_time_filter = _impl.dead_time_filter
lfsr_bits = _impl.lfsr_bits

__all__ = ["BACKEND", "candidate_clicks", "dead_time_filter", "lfsr_bits"]
