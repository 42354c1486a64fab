"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise (or when the
environment variable ``BOHMCAVITY_PURE_PYTHON`` is set to a non-empty value
other than ``0``) the numpy implementation is used.  ``BACKEND`` names the
active choice.
"""

import os

from . import _kernels_py

_force_py = os.environ.get("BOHMCAVITY_PURE_PYTHON", "") not in ("", "0")

try:
    if _force_py:
        raise ImportError
    from . import _kernels as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

rk4_trace = _impl.rk4_trace
z_moments = _impl.z_moments
psf_convolve = _impl.psf_convolve


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


def get_backend(name):
    """Return the module implementing backend ``'cython'`` or ``'python'``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown backend {name!r}")
