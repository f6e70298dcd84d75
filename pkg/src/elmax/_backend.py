"""Select the projection kernel: compiled extension if built, else pure Python.

Set ``ELMAX_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from elmax import _cone_py

python_kernel = _cone_py

if os.environ.get("ELMAX_PURE_PYTHON", "") not in ("", "0"):
    compiled_kernel = None
else:
    try:
        from elmax import _cone as compiled_kernel  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        compiled_kernel = None

kernel = compiled_kernel if compiled_kernel is not None else python_kernel
BACKEND = "compiled" if compiled_kernel is not None else "python"

levelset_projection = kernel.levelset_projection
levelset_distances = kernel.levelset_distances
