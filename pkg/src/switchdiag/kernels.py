"""Kernel backend selection.

The compiled extension is used when importable. Set
``SWITCHDIAG_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKENDS = {"python": _kernels_py}

try:
    from . import _ckernels  # type: ignore[attr-defined]
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["cython"] = _ckernels

if os.environ.get("SWITCHDIAG_PURE_PYTHON", "") not in ("", "0") or _ckernels is None:
    BACKEND = "python"
else:
    BACKEND = "cython"

_impl = BACKENDS[BACKEND]

sq_dists = _impl.sq_dists
neg_sq_softmax = _impl.neg_sq_softmax
proto_xent = _impl.proto_xent
knn_vote = _impl.knn_vote


def get_backend(name: str):
    """Return the kernel module for ``name`` ('python' or 'cython')."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {sorted(BACKENDS)}") from None
