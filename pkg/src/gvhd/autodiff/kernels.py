"""Backend selection for the hot kernels.

The compiled extension ``_ext`` is used when it imports; otherwise, or when
``GVHD_PURE_PYTHON=1`` is set, the numpy implementations are used. Both
backends expose ``gru_forward``, ``gru_backward``, ``cell_lift_forward`` and
``cell_lift_backward`` with identical signatures.
"""

import os
from types import SimpleNamespace

from . import _cell_numpy, _gru_numpy

numpy_backend = SimpleNamespace(
    name="numpy",
    gru_forward=_gru_numpy.gru_forward,
    gru_backward=_gru_numpy.gru_backward,
    cell_lift_forward=_cell_numpy.cell_lift_forward,
    cell_lift_backward=_cell_numpy.cell_lift_backward,
)

compiled_backend = None
if os.environ.get("GVHD_PURE_PYTHON", "").lower() not in ("1", "true", "yes"):
    try:
        from . import _ext
    except ImportError:
        pass
    else:
        compiled_backend = SimpleNamespace(
            name="cython",
            gru_forward=_ext.gru_forward,
            gru_backward=_ext.gru_backward,
            cell_lift_forward=_ext.cell_lift_forward,
            cell_lift_backward=_ext.cell_lift_backward,
        )

backend = compiled_backend if compiled_backend is not None else numpy_backend
BACKEND_NAME = backend.name
