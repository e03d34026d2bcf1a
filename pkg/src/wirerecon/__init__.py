"""Single-view 3D guidewire reconstruction.

Registers a 3D vessel centerline to 2D projections over SE(3) and
back-projects the observed guidewire with depth recovery, with a
synthetic C-arm phantom generator for end-to-end validation.
"""

from .liegeom import CameraIntrinsics, RigidTransform, exp_map, log_map, project

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "RigidTransform",
    "exp_map",
    "log_map",
    "project",
    "__version__",
]
