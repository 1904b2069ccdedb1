"""Hot elementwise kernels, with a compiled fast path.

Two interchangeable implementations exist: `numpy_ref` (always
available) and the Cython extension `_speedups`. Measured on x86-64
(see benchmarks/bench_kernels.py): the compiled softmax and scatter-add
kernels win by large factors at every size, while for the LSTM cell
numpy's SIMD transcendentals win on big batches and the compiled loop
wins on single rows. The default dispatch therefore picks per kernel
and, for the cell, per input size.

Set ``UPLM_KERNELS=python`` or ``UPLM_KERNELS=cython`` to force one
implementation everywhere.
"""

import os

from . import numpy_ref

try:
    from . import _speedups
except ImportError:
    _speedups = None

_FORCED = os.environ.get("UPLM_KERNELS", "").lower()
if _FORCED == "cython" and _speedups is None:
    raise ImportError("UPLM_KERNELS=cython but the extension is not built")

# Below roughly this many gate pre-activations the compiled cell beats
# numpy's vectorized transcendentals (python-call overhead dominates).
_SMALL_CELL = 1024

if _FORCED == "python" or _speedups is None:
    BACKEND = "python"
    lstm_cell_forward = numpy_ref.lstm_cell_forward
    lstm_cell_backward = numpy_ref.lstm_cell_backward
    softmax_nll_forward = numpy_ref.softmax_nll_forward
    softmax_nll_backward = numpy_ref.softmax_nll_backward
    scatter_add_rows = numpy_ref.scatter_add_rows
elif _FORCED == "cython":
    BACKEND = "cython"
    lstm_cell_forward = _speedups.lstm_cell_forward
    lstm_cell_backward = _speedups.lstm_cell_backward
    softmax_nll_forward = _speedups.softmax_nll_forward
    softmax_nll_backward = _speedups.softmax_nll_backward
    scatter_add_rows = _speedups.scatter_add_rows
else:
    BACKEND = "mixed"
    softmax_nll_forward = _speedups.softmax_nll_forward
    softmax_nll_backward = _speedups.softmax_nll_backward
    scatter_add_rows = _speedups.scatter_add_rows

    def lstm_cell_forward(z, c_prev, h_out, c_out):
        if z.size < _SMALL_CELL:
            _speedups.lstm_cell_forward(z, c_prev, h_out, c_out)
        else:
            numpy_ref.lstm_cell_forward(z, c_prev, h_out, c_out)

    def lstm_cell_backward(z, c_prev, c, dh, dc_in, dz_out, dc_prev_out):
        if z.size < _SMALL_CELL:
            _speedups.lstm_cell_backward(z, c_prev, c, dh, dc_in, dz_out, dc_prev_out)
        else:
            numpy_ref.lstm_cell_backward(z, c_prev, c, dh, dc_in, dz_out, dc_prev_out)
