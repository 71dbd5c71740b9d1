"""Select the kernel implementation at import time.

The compiled extension is used when it imports; otherwise the NumPy version.
Set ``SE3FLOW_BACKEND=python`` to force the fallback, or ``=compiled`` to make
a missing extension an import error.
"""

import contextlib
import logging
import os

from . import _pykernels

log = logging.getLogger(__name__)

_requested = os.environ.get("SE3FLOW_BACKEND", "auto").lower()

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
    if _requested == "compiled":
        raise

if _requested == "python" or _ckernels is None:
    kernels = _pykernels
    name = "python"
else:
    kernels = _ckernels
    name = "compiled"

log.debug("se3flow kernel backend: %s", name)


def available():
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def get(backend_name):
    if backend_name == "python":
        return _pykernels
    if backend_name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {backend_name!r}")


def lookup_volume(*args, **kwargs):
    return _pykernels.lookup_volume(*args, **kwargs)


@contextlib.contextmanager
def use(backend_name):
    """Temporarily route every kernel call through ``backend_name``."""
    global kernels, name
    saved = kernels, name
    kernels, name = get(backend_name), backend_name
    try:
        yield kernels
    finally:
        kernels, name = saved
