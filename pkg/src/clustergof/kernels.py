"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
reference implementation is loaded. Set ``CLUSTERGOF_PURE_PYTHON=1`` to force
the fallback. Results agree across backends to rounding, not bit-for-bit, so
seeded reproducibility is guaranteed within one backend.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("CLUSTERGOF_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels

gauss_diag_log_joint = _impl.gauss_diag_log_joint
normalize_log_rows = _impl.normalize_log_rows
bernstein_eval = _impl.bernstein_eval
el_dual_newton = _impl.el_dual_newton

EL_CONVERGED = _pykernels.EL_CONVERGED
EL_MAX_ITER = _pykernels.EL_MAX_ITER
EL_SEPARATED = _pykernels.EL_SEPARATED


def compiled_available():
    """True when the compiled extension can be imported."""
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return False
    return True
