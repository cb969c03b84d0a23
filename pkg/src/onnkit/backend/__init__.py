"""Kernel backend selection.

The compiled extension is preferred when it built; the NumPy reference is
always available.  ``ONNKIT_BACKEND=python`` or ``=compiled`` forces a
choice (the latter raises if the extension is missing).
"""

import os

from . import python_ref

_BACKENDS = {python_ref.NAME: python_ref}

try:
    from . import _kernels
    _BACKENDS[_kernels.NAME] = _kernels
except ImportError:
    _kernels = None

DEFAULT = "compiled" if _kernels is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name=None):
    """Resolve a backend module by name, env override, or default."""
    if name is None:
        name = os.environ.get("ONNKIT_BACKEND") or DEFAULT
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; available: {available_backends()}"
        ) from None
