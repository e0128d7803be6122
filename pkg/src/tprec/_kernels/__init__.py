"""Kernel backend selection.

Two interchangeable implementations of the recurrence hot paths exist:

* ``_core`` -- Cython extension (built by setup.py), used when importable;
* ``_pure`` -- pure-numpy reference, always available.

The environment variable ``TPREC_BACKEND`` forces a choice: ``compiled``
fails loudly if the extension is missing, ``python`` skips it.  The active
choice is exposed as :data:`BACKEND` and reported by ``tprec --version``.
Both backends implement identical signatures and are cross-checked by the
test suite.
"""

import os

_requested = os.environ.get("TPREC_BACKEND", "").strip().lower()

if _requested not in ("", "compiled", "python"):
    raise ImportError(
        f"TPREC_BACKEND={_requested!r} not recognized; use 'compiled' or 'python'"
    )

if _requested == "python":
    from . import _pure as _impl

    BACKEND = "python"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise ImportError(
                "TPREC_BACKEND=compiled but the compiled kernels are not "
                "built; run `pip install -e .` or `python setup.py "
                "build_ext --inplace`"
            )
        from . import _pure as _impl

        BACKEND = "python"

rnn_window_forward = _impl.rnn_window_forward
rnn_window_backward = _impl.rnn_window_backward
lstm_window_forward = _impl.lstm_window_forward
lstm_window_backward = _impl.lstm_window_backward
lstm_decode_forward = _impl.lstm_decode_forward
lstm_decode_backward = _impl.lstm_decode_backward
simulate_transition_path = _impl.simulate_transition_path

__all__ = [
    "BACKEND",
    "rnn_window_forward",
    "rnn_window_backward",
    "lstm_window_forward",
    "lstm_window_backward",
    "lstm_decode_forward",
    "lstm_decode_backward",
    "simulate_transition_path",
]
