"""Kernel backend selection.

The compiled extension is used when it was built and ``RPANAV_PURE_PYTHON``
is not set; otherwise the numpy implementations are used.  Both expose the
same five functions.  ``sigmoid`` and ``lstm_forward`` stay on numpy even
with the extension present: they are dominated by exp/tanh, where numpy's
vectorised ufuncs beat a scalar libm loop (see benchmarks/bench_kernels.py).
"""

import os

from . import _fallback

BACKEND = "numpy"
COMPILED = ("masked_softmax", "softmax_backward", "lstm_backward")
_impl = _fallback

if not os.environ.get("RPANAV_PURE_PYTHON"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback


def _pick(name):
    return getattr(_impl if name in COMPILED else _fallback, name)


sigmoid = _pick("sigmoid")
masked_softmax = _pick("masked_softmax")
softmax_backward = _pick("softmax_backward")
lstm_forward = _pick("lstm_forward")
lstm_backward = _pick("lstm_backward")
