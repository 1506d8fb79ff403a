"""Backend selection for the hot kernels.

The compiled extension is used when it was built; setting the environment
variable ``MEMWAVE_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
_ck = None
if os.environ.get("MEMWAVE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _ck
        BACKEND = "compiled"
    except ImportError:  # extension not built
        _ck = None

ResolventError = _pykernels.ResolventError


def get(backend="auto"):
    """Return the kernel module for ``backend`` in {'auto', 'compiled', 'python'}."""
    if backend == "python":
        return _pykernels
    if backend == "compiled":
        if _ck is None:
            raise RuntimeError("compiled kernels are not available")
        return _ck
    return _ck if _ck is not None else _pykernels
