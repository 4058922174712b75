"""Hot numeric kernels with selectable backend.

The numba backend is the default; set ``CRNSYNTH_BACKEND=numpy`` to force
the pure-numpy fallback (or ``numba`` to fail loudly when numba is
missing). ``benchmarks/bench_kernels.py`` compares the two.

All kernels share one contract regardless of backend; results agree to
float rounding but are not bitwise identical across backends, so seeds
reproduce runs only within a backend.
"""

import os

from . import numpy_backend

_BACKENDS = {"numpy": lambda: numpy_backend}


def _load_numba():
    import warnings
    # numba's TBB-version probe warns when the threading layer falls back
    # to omp/workqueue (fine for these kernels); it fires on the first
    # parallel call, so the filter must outlive the import.
    warnings.filterwarnings("ignore", message=".*TBB.*",
                            category=Warning, module=r"numba\..*")
    from . import numba_backend
    return numba_backend


_BACKENDS["numba"] = _load_numba

conv2d_out_shape = numpy_backend.conv2d_out_shape

_active = None


def set_backend(name):
    """Select the kernel backend ('numpy' or 'numba'). Returns its name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; expected one of {sorted(_BACKENDS)}")
    _active = _BACKENDS[name]()
    return _active.NAME


def backend_name():
    return _active.NAME


def _initial_backend():
    requested = os.environ.get("CRNSYNTH_BACKEND", "auto").lower()
    if requested == "auto":
        try:
            return set_backend("numba")
        except ImportError:
            return set_backend("numpy")
    return set_backend(requested)


_initial_backend()


def conv2d_forward(x, w, b, stride=1, dilation=1):
    return _active.conv2d_forward(x, w, b, stride=stride, dilation=dilation)


def conv2d_backward_input(dy, w, in_h, in_w, stride=1, dilation=1):
    return _active.conv2d_backward_input(dy, w, in_h, in_w, stride=stride, dilation=dilation)


def conv2d_backward_params(x, dy, kh, kw, stride=1, dilation=1):
    return _active.conv2d_backward_params(x, dy, kh, kw, stride=stride, dilation=dilation)


def bilinear_forward(x, out_h, out_w):
    return _active.bilinear_forward(x, out_h, out_w)


def bilinear_backward(dy, in_h, in_w):
    return _active.bilinear_backward(dy, in_h, in_w)
