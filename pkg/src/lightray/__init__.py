"""Discrete light ray transforms on 2+1 dimensional spacetime grids.

Submodules: :mod:`.grid` (grids and string phantoms), :mod:`.forward`
(ray enumeration and sparse assembly), :mod:`.solvers` (Landweber, FISTA,
hybrid and generalized Tikhonov), :mod:`.priors` (Matérn covariance),
:mod:`.spectral` (Fourier-side analysis) and :mod:`.experiments`.
"""
__version__ = "0.1.0"

from ._accel import backend, set_threads  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    DimensionMismatchError,
    InvalidCountError,
    InvalidExtentError,
    KrylovBreakdown,
    LightrayError,
    NumericalError,
    ZeroDataError,
)
from .forward import (  # noqa: E402
    Observation,
    RayPolicy,
    RaySet,
    SparseOperator,
    add_noise,
    apply,
    apply_adjoint,
    assemble_operator,
    enumerate_rays,
)
from .grid import Phantom, SpaceTimeGrid, build_grid, eval_phantom, rasterize_phantom  # noqa: E402

__all__ = [
    "__version__",
    "backend",
    "set_threads",
    "ConfigError",
    "DimensionMismatchError",
    "InvalidCountError",
    "InvalidExtentError",
    "KrylovBreakdown",
    "LightrayError",
    "NumericalError",
    "ZeroDataError",
    "Observation",
    "RayPolicy",
    "RaySet",
    "SparseOperator",
    "add_noise",
    "apply",
    "apply_adjoint",
    "assemble_operator",
    "enumerate_rays",
    "Phantom",
    "SpaceTimeGrid",
    "build_grid",
    "eval_phantom",
    "rasterize_phantom",
]
