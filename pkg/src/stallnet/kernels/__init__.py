"""LSTM sequence kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``STALLNET_PURE_PYTHON=1``
to force the numpy implementation. ``BACKEND`` names the active one.
"""

import os

from . import _lstm_py

if os.environ.get("STALLNET_PURE_PYTHON", "") not in ("", "0"):
    _ext = None
else:
    try:
        from . import _lstm_ext as _ext
    except ImportError:
        _ext = None

if _ext is not None:
    lstm_seq_forward = _ext.lstm_seq_forward
    lstm_seq_backward = _ext.lstm_seq_backward
    BACKEND = "cython"
else:
    lstm_seq_forward = _lstm_py.lstm_seq_forward
    lstm_seq_backward = _lstm_py.lstm_seq_backward
    BACKEND = "python"

__all__ = ["lstm_seq_forward", "lstm_seq_backward", "BACKEND"]
