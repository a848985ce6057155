"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled module is used when it was built and ``FEDSEL_PURE_PYTHON`` is
unset; otherwise the numpy versions are imported under the same names.
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("FEDSEL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

pg_least_norm = _impl.pg_least_norm
gpcb_runs = _impl.gpcb_runs

__all__ = ["BACKEND", "pg_least_norm", "gpcb_runs"]
