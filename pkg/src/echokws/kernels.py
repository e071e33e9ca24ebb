"""Hot-loop dispatch: compiled extension when built, numpy/Python otherwise.

Set ``ECHOKWS_PURE=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

try:
    if os.environ.get("ECHOKWS_PURE"):
        raise ImportError("pure backend requested")
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"


def fused_accuracy(logp_v, logp_e, ind, cat_v, cat_e, labels, params, silence_id, impl=None):
    impl = impl or _impl
    return impl.fused_accuracy(
        np.ascontiguousarray(logp_v, dtype=np.float64),
        np.ascontiguousarray(logp_e, dtype=np.float64),
        np.ascontiguousarray(ind, dtype=np.float64),
        np.ascontiguousarray(cat_v, dtype=np.int64),
        np.ascontiguousarray(cat_e, dtype=np.int64),
        np.ascontiguousarray(labels, dtype=np.int64),
        np.ascontiguousarray(np.atleast_2d(params), dtype=np.float64),
        int(silence_id),
    )


def edit_counts(ref, hyp, impl=None):
    impl = impl or _impl
    return tuple(int(v) for v in impl.edit_counts(np.asarray(ref, dtype=np.int64),
                                                   np.asarray(hyp, dtype=np.int64)))
