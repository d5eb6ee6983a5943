"""Hot kernels: assignment, SODA dynamic program, interval/box IoU, smoothing.

The compiled extension is used when it was built; otherwise the pure-Python
module is imported. Set ``VIEWDVC_PURE_PYTHON=1`` to force the fallback.
"""
import importlib
import os

_FORCE_PY = os.environ.get("VIEWDVC_PURE_PYTHON", "") not in ("", "0")


def load_backend(name):
    """Import a kernel backend by name ("cython" or "python")."""
    if name == "cython":
        return importlib.import_module("viewdvc.kernels._ckernels")
    if name == "python":
        return importlib.import_module("viewdvc.kernels._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if _FORCE_PY:
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND
linear_assignment = _impl.linear_assignment
soda_dp = _impl.soda_dp
pairwise_tiou = _impl.pairwise_tiou
pairwise_box_iou = _impl.pairwise_box_iou
majority_filter = _impl.majority_filter
assignment_cost = _impl.assignment_cost

__all__ = [
    "BACKEND",
    "assignment_cost",
    "available_backends",
    "linear_assignment",
    "load_backend",
    "majority_filter",
    "pairwise_box_iou",
    "pairwise_tiou",
    "soda_dp",
]
