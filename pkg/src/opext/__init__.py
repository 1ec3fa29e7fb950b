"""Operator extension from kernel-response training data on closed surfaces."""

__version__ = "0.1.0"

from .kernels import KernelSpec, gaussian, matern, wendland
from .geometry import SurfaceCloud, farthest_point_sample, fill_distance, sample_radial_manifold, shape_preset
from .rkhs import assemble_gram, condition_number, error_norms, solve_regularized
from .lb import MeshfreeOracle, PerturbedOracle, SpectralSphereOracle, make_test_functions
from .extension import ExtensionReport, ResponseCache, bound_report, bound_reports, extend_apply, fit_input

__all__ = [
    "__version__",
    "KernelSpec",
    "gaussian",
    "matern",
    "wendland",
    "SurfaceCloud",
    "farthest_point_sample",
    "fill_distance",
    "sample_radial_manifold",
    "shape_preset",
    "assemble_gram",
    "condition_number",
    "error_norms",
    "solve_regularized",
    "MeshfreeOracle",
    "PerturbedOracle",
    "SpectralSphereOracle",
    "make_test_functions",
    "ExtensionReport",
    "ResponseCache",
    "bound_report",
    "bound_reports",
    "extend_apply",
    "fit_input",
]
