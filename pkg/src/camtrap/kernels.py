"""Backend selection for the hot convolution/pooling loops.

The compiled extension is used when it imports; otherwise the NumPy
fallback is used.  Set ``CAMTRAP_KERNELS=python`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CAMTRAP_KERNELS", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def _contig(a):
    return a if a.flags.c_contiguous else a.copy(order="C")


def im2col(xp, kh, kw, stride, ho, wo):
    return _impl.im2col(_contig(xp), kh, kw, stride, ho, wo)


def col2im(cols, n, c, hp, wp, kh, kw, stride, ho, wo):
    return _impl.col2im(_contig(cols), n, c, hp, wp, kh, kw, stride, ho, wo)


def maxpool_forward(xp, k, stride, ho, wo):
    return _impl.maxpool_forward(_contig(xp), k, stride, ho, wo)


def maxpool_backward(dout, arg, hp, wp, k, stride):
    return _impl.maxpool_backward(_contig(dout), _contig(arg), hp, wp, k, stride)


def use_backend(name):
    """Switch backends at runtime ("compiled" or "python"); used by the benchmark."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "compiled":
        from . import _kernels as _compiled

        _impl, BACKEND = _compiled, "compiled"
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
