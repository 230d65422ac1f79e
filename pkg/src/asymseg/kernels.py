"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy fallback
is loaded. Setting ``ASYMSEG_KERNELS=python`` forces the fallback.
"""

import os

if os.environ.get("ASYMSEG_KERNELS", "").lower() in ("python", "py", "numpy"):
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND

conv3x3_forward = _impl.conv3x3_forward
conv3x3_grad_weight = _impl.conv3x3_grad_weight
conv3x3_grad_input = _impl.conv3x3_grad_input
edt_squared = _impl.edt_squared
fill_polygon = _impl.fill_polygon
longest_inside_chord = _impl.longest_inside_chord
widest_cross_chord = _impl.widest_cross_chord


def available_backends():
    """Kernel modules importable in this environment, compiled first."""
    from . import _pykernels

    mods = []
    try:
        from . import _ckernels

        mods.append(_ckernels)
    except ImportError:
        pass
    mods.append(_pykernels)
    return mods
