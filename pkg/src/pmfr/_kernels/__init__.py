"""Scoring kernel selection: compiled extension when built, pure Python otherwise.

Set ``PMFR_PURE_PYTHON=1`` to force the fallback (used by the benchmark and
by parity tests).
"""

import os

from . import _scoring_py

BACKEND = "python"
_impl = _scoring_py

if not os.environ.get("PMFR_PURE_PYTHON"):
    try:
        from . import _scoring as _compiled

        _impl = _compiled
        BACKEND = "cython"
    except ImportError:
        pass

tokenize = _impl.tokenize
overlap = _impl.overlap
score_batch = _impl.score_batch
