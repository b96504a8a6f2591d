"""Backend selection for the per-query numerical kernels.

The compiled extension ``dsvs._ckernels`` is used when it imports; otherwise
(or when ``DSVS_PURE_PYTHON=1``) the numpy fallback in ``dsvs._pykernels`` is
used. Both expose the same functions.
"""
import os

from . import _pykernels

python = _pykernels
try:
    from . import _ckernels as compiled
except ImportError:  # extension not built
    compiled = None

if compiled is not None and os.environ.get("DSVS_PURE_PYTHON", "") not in ("1", "true"):
    backend = compiled
    BACKEND = "cython"
else:
    backend = _pykernels
    BACKEND = "python"

lwt_forward = backend.lwt_forward
lwt_forward_jacobian = backend.lwt_forward_jacobian
lwt_inverse = backend.lwt_inverse
gmr_mean = backend.gmr_mean
wsaqf_value_grad = backend.wsaqf_value_grad

__all__ = ["BACKEND", "compiled", "python", "lwt_forward", "lwt_forward_jacobian",
           "lwt_inverse", "gmr_mean", "wsaqf_value_grad"]
