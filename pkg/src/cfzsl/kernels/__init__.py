"""Dense math kernels with a compiled core and a pure-Python fallback.

The compiled backend (``cfzsl.kernels._ckernels``, built from Cython) is
preferred when importable; otherwise the numpy implementation in
``pykernels`` is used. Set ``CFZSL_KERNELS=python`` or ``CFZSL_KERNELS=cython``
to force a backend (forcing ``cython`` raises if the extension is missing).

``python benchmarks/bench_kernels.py`` compares the two backends.
"""

import os

from cfzsl.kernels import pykernels as _py

_requested = os.environ.get("CFZSL_KERNELS", "").strip().lower()

if _requested in ("", "c", "cython"):
    try:
        from cfzsl.kernels import _ckernels as _impl
    except ImportError:
        if _requested:
            raise ImportError(
                "CFZSL_KERNELS=cython requested but the compiled extension "
                "is not available; reinstall the package or unset the variable"
            )
        _impl = _py
elif _requested in ("py", "python"):
    _impl = _py
else:
    raise ImportError(f"unknown kernel backend {_requested!r} in CFZSL_KERNELS")

BACKEND = _impl.NAME

matmul = _impl.matmul
matmul_nt = _impl.matmul_nt
matmul_tn = _impl.matmul_tn
relu_forward = _impl.relu_forward
relu_backward = _impl.relu_backward
softmax = _impl.softmax
softmax_cross_entropy = _impl.softmax_cross_entropy
sgd_momentum_update = _impl.sgd_momentum_update
adam_update = _impl.adam_update


def backends():
    """Importable backend modules, keyed by name. Used by tests and benchmarks."""
    found = {_py.NAME: _py}
    try:
        from cfzsl.kernels import _ckernels
        found[_ckernels.NAME] = _ckernels
    except ImportError:
        pass
    return found
