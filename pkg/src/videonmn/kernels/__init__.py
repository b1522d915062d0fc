"""Recurrence kernel backend selection.

Imports the compiled extension when present, otherwise falls back to the
numpy reference implementation. Both expose `lstm_recur_fwd` and
`lstm_recur_bwd` with identical semantics; set VIDEONMN_PURE=1 to force
the fallback (used by the backend-comparison benchmark and tests).
"""

import os

from . import reference

if os.environ.get("VIDEONMN_PURE"):
    _impl = reference
else:
    try:
        from . import _fastkern as _impl
    except ImportError:
        _impl = reference

BACKEND = _impl.NAME
lstm_recur_fwd = _impl.lstm_recur_fwd
lstm_recur_bwd = _impl.lstm_recur_bwd


def available_backends():
    out = {"reference": reference}
    try:
        from . import _fastkern

        out["compiled"] = _fastkern
    except ImportError:
        pass
    return out
