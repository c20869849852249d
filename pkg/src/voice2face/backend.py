"""Kernel backend selection.

The compiled Cython kernels are preferred when importable; otherwise the
pure NumPy implementation is used. Override with the environment variable
VOICE2FACE_KERNELS:

    auto      compiled if available, NumPy otherwise (default)
    compiled  require the extension, raise if missing
    python    force the NumPy fallback

Either way the surrounding matrix products run through NumPy's BLAS; the
backends differ only in how patch gather/scatter is executed.
"""

import os

from voice2face import _kernels_numpy

_MODE = os.environ.get("VOICE2FACE_KERNELS", "auto").lower()

if _MODE not in ("auto", "compiled", "python"):
    raise ValueError(
        "VOICE2FACE_KERNELS must be one of auto/compiled/python, got %r" % _MODE
    )

_compiled = None
if _MODE in ("auto", "compiled"):
    try:
        from voice2face import _convkernels as _compiled
    except ImportError:
        if _MODE == "compiled":
            raise ImportError(
                "VOICE2FACE_KERNELS=compiled but the voice2face._convkernels "
                "extension is not built; install with the C compiler available "
                "or use VOICE2FACE_KERNELS=python"
            )

_impl = _compiled if _compiled is not None else _kernels_numpy

im2col1d = _impl.im2col1d
col2im1d = _impl.col2im1d
im2col2d = _impl.im2col2d
col2im2d = _impl.col2im2d


def backend_name():
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return "compiled" if _impl is _compiled else "python"


def available_backends():
    """Mapping of backend name -> kernel module, for benchmarks and tests."""
    out = {"python": _kernels_numpy}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from voice2face import _convkernels
            out["compiled"] = _convkernels
        except ImportError:
            pass
    return out


def worker_count():
    """Worker-thread cap from VOICE2FACE_THREADS (default: all cores)."""
    env = os.environ.get("VOICE2FACE_THREADS", "").strip()
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("VOICE2FACE_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1
