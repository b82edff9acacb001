"""Hot-kernel backends.

The compiled extension is preferred when it imported cleanly; otherwise the
pure-numpy fallback is used. ``PRUNELAB_KERNELS=python|ext`` forces a backend
at import time. Both backends are deterministic; they may differ in the last
few ulps because the matrix products sum in different orders.
"""

import os

from . import pyref

_FORCED = os.environ.get("PRUNELAB_KERNELS", "auto")

_ext = None
if _FORCED in ("auto", "ext"):
    try:
        from . import _corex as _ext
    except ImportError:
        _ext = None
    if _FORCED == "ext" and _ext is None:
        raise ImportError("PRUNELAB_KERNELS=ext but the compiled kernels are unavailable")

_active = _ext if _ext is not None else pyref

BACKEND = _active.NAME
HAVE_EXT = _ext is not None


def available_backends():
    names = ["python"]
    if HAVE_EXT:
        names.append("ext")
    return names


def get_backend(name):
    """Return a backend namespace by name ('python' or 'ext')."""
    if name == "python":
        return pyref
    if name == "ext":
        if _ext is None:
            raise ValueError("compiled kernel backend is not available")
        return _ext
    raise ValueError(f"unknown kernel backend {name!r}")


def set_backend(name):
    """Rebind the module-level kernels. Intended for benchmarks; not thread safe."""
    global _active, BACKEND
    global affine, affine_grad, relu, relu_grad, softmax, softmax_xent, sgd_momentum
    _active = get_backend(name)
    BACKEND = _active.NAME
    affine = _active.affine
    affine_grad = _active.affine_grad
    relu = _active.relu
    relu_grad = _active.relu_grad
    softmax = _active.softmax
    softmax_xent = _active.softmax_xent
    sgd_momentum = _active.sgd_momentum


affine = _active.affine
affine_grad = _active.affine_grad
relu = _active.relu
relu_grad = _active.relu_grad
softmax = _active.softmax
softmax_xent = _active.softmax_xent
sgd_momentum = _active.sgd_momentum
