"""Backend selection for the hot geometry/grid kernels.

The compiled extension is used when it imports; set ``USONIC_SLAM_PURE=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("USONIC_SLAM_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py

cast_rays = _impl.cast_rays
wedge_min = _impl.wedge_min
wedge_mins = _impl.wedge_mins
rasterize_scan = _impl.rasterize_scan

__all__ = ["BACKEND", "cast_rays", "wedge_min", "wedge_mins", "rasterize_scan"]
