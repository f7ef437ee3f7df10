"""Hot inner loops, compiled with numba when available.

Set ``RTHN_DISABLE_NUMBA=1`` to force the pure-numpy fallback (useful for
debugging and for the numba-vs-numpy benchmark). Both backends share one
contract; see ``_numpy.py`` for the documented reference versions.
"""

import os

import numpy as np

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("RTHN_DISABLE_NUMBA", "").strip().lower() not in ("1", "true", "yes"):
    try:
        from . import _numba

        _impl = _numba
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba is a hard dependency in practice
        pass


def get_backend(name=None):
    """Return the kernel module named ``name`` ("numba" | "numpy"), default active."""
    if name is None:
        return _impl
    if name == "numpy":
        return _numpy
    if name == "numba":
        from . import _numba

        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


def lstm_forward(xg, w_h, mask, reverse):
    return _impl.lstm_forward(
        np.ascontiguousarray(xg, dtype=np.float64),
        np.ascontiguousarray(w_h, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.float64),
        bool(reverse),
    )


def lstm_backward(d_out, w_h, mask, reverse, gates, c_new_all, h_carry, c_carry):
    return _impl.lstm_backward(
        np.ascontiguousarray(d_out, dtype=np.float64),
        np.ascontiguousarray(w_h, dtype=np.float64),
        np.ascontiguousarray(mask, dtype=np.float64),
        bool(reverse),
        gates,
        c_new_all,
        h_carry,
        c_carry,
    )


def build_gp(labels, clause_mask, rel_pos, window):
    return _impl.build_gp(
        np.ascontiguousarray(labels, dtype=np.float64),
        np.ascontiguousarray(clause_mask, dtype=np.float64),
        np.ascontiguousarray(rel_pos, dtype=np.int64),
        int(window),
    )


def threshold_counts(scores, labels, thresholds):
    return _impl.threshold_counts(
        np.ascontiguousarray(scores, dtype=np.float64),
        np.ascontiguousarray(labels, dtype=np.float64),
        np.ascontiguousarray(thresholds, dtype=np.float64),
    )


__all__ = [
    "BACKEND",
    "get_backend",
    "lstm_forward",
    "lstm_backward",
    "build_gp",
    "threshold_counts",
]
