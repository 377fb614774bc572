"""Backend selection for the hot kernels.

The compiled extension is used when importable; set ``MVM_PURE_PYTHON=1`` to
force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("MVM_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend if compiled_backend is not None else python_backend
BACKEND = "cython" if compiled_backend is not None else "python"

lattice_two_state = backend.lattice_two_state
compose_rebin = backend.compose_rebin
