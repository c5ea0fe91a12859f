"""Selects the compiled kernels when built, the pure-Python ones otherwise.

Set ``EVGAME_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _pykernels

if os.environ.get("EVGAME_PURE_PYTHON") == "1":
    kernels = _pykernels
else:
    try:
        from . import _ckernels as kernels
    except ImportError:  # extension not built
        kernels = _pykernels

BACKEND = "python" if kernels is _pykernels else "cython"
InfeasibleBudget = tuple({_pykernels.InfeasibleBudget, kernels.InfeasibleBudget})
