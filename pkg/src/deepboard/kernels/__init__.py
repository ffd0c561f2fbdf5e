"""Kernel backend selection.

The compiled Cython extension is preferred; the pure NumPy reference is used
when the extension is missing or when DEEPBOARD_KERNELS=py is set. Both
expose the same ``render_rays_dense`` / ``render_rays_octree`` surface and
agree numerically (see tests/test_kernel_parity.py and the bench CLI).
"""

import os

from . import pyref

_forced = os.environ.get("DEEPBOARD_KERNELS", "").strip().lower()

if _forced in ("py", "python"):
    _impl = pyref
elif _forced in ("compiled", "c"):
    from . import _render as _impl  # noqa: F401  (raises if not built)
else:
    try:
        from . import _render as _impl
    except ImportError:
        _impl = pyref

BACKEND_NAME = _impl.BACKEND_NAME
render_rays_dense = _impl.render_rays_dense
render_rays_octree = _impl.render_rays_octree
sh_basis = pyref.sh_basis


def active_backend() -> str:
    """Name of the kernel backend in use: 'compiled' or 'python'."""
    return BACKEND_NAME


def backends() -> dict:
    """All importable kernel backends, keyed by name."""
    found = {pyref.BACKEND_NAME: pyref}
    try:
        from . import _render
        found[_render.BACKEND_NAME] = _render
    except ImportError:
        pass
    return found
