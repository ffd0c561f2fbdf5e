"""Server-rendered billboard streaming at desk scale.

Volumetric objects (dense grid or sparse octree with SH view-dependent color)
are rendered server-side into always-facing billboard textures, streamed over
a binary pose/frame protocol, composited client-side, and backed by invisible
proxy meshes for physics queries.
"""

from .kernels import active_backend

__version__ = "0.1.0"

__all__ = ["active_backend", "__version__"]
