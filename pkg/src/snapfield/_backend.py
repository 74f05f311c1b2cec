"""Pick the compiled kernels when importable, else the numpy fallback.

Set ``SNAPFIELD_BACKEND=python`` to force the fallback.
"""
import os

from . import _reference

kernels = _reference
NAME = "python"

if os.environ.get("SNAPFIELD_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as kernels  # noqa: F811
        NAME = "cython"
    except ImportError:
        kernels = _reference
        NAME = "python"


def get(name=None):
    """Return a kernel module by name (``"cython"``/``"python"``) or the default."""
    if name is None:
        return kernels
    if name == "python":
        return _reference
    from . import _kernels
    return _kernels
