"""Kernel backend selection.

The compiled extension is used when it was built; set
``MAXFL_SIM_PURE_PYTHON=1`` to force the numpy implementation.
"""

import os

from . import _pykernels

BACKEND = "python"
if not os.environ.get("MAXFL_SIM_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

SIGMOID, SOFTPLUS, RELU = _pykernels.SIGMOID, _pykernels.SOFTPLUS, _pykernels.RELU

stationary_points = _impl.stationary_points
select_minima = _impl.select_minima
