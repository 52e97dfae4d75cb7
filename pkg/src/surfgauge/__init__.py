"""Gauge theory of disclinations on elastic 2D surfaces.

Submodules
----------
grid, geometry
    Structured parameter grids, embeddings, metrics, connections,
    curvature and the covariant Laplacian / Green function.
gauge, elastic
    SO(3) gauge fields, vortex potentials, Yang-Mills energy; strain,
    stress and elastic energy.
vonkarman, covariant
    Newton solvers for the flat von Karman system with a disclination
    source and for a single disclination on a curved reference.
minimizer
    Discrete total energy, hand-written gradient and preconditioned L-BFGS.
config, cli, io, estimators
    Experiment files, command-line driver, exports and scikit-learn style
    wrappers.
"""
from .covariant import (CovariantState, LinearizationWarning, SurfaceProblem, covariant_residual,
                        solve_single_disclination)
from .elastic import MaterialParams, elastic_energy, strain_tensor, stress_density
from .gauge import (DisclinationSpec, GaugeField, covariant_vortex_potential, disclination_density,
                    field_strength, flat_vortex_potential, reference_metric_with_defects,
                    yang_mills_energy)
from .geometry import (MetricField, SolverError, christoffel, covariant_green_function,
                       covariant_laplacian, curvature_data, induced_metric)
from .grid import Embedding, Grid, GridError
from .minimizer import (EnergyBreakdown, equilibrium_residual, energy_gradient, minimize_shape,
                        total_energy)
from .vonkarman import (MembraneState, VkSource, buckling_comparison, flat_disclination_reference,
                        solve_von_karman, von_karman_residual)

__version__ = "0.1.0"

__all__ = [
    "CovariantState", "DisclinationSpec", "Embedding", "EnergyBreakdown", "GaugeField", "Grid",
    "GridError", "LinearizationWarning", "MaterialParams", "MembraneState", "MetricField",
    "SolverError", "SurfaceProblem", "VkSource", "buckling_comparison", "christoffel",
    "covariant_green_function", "covariant_laplacian", "covariant_residual",
    "covariant_vortex_potential", "curvature_data", "disclination_density", "elastic_energy",
    "energy_gradient", "equilibrium_residual", "field_strength", "flat_disclination_reference",
    "flat_vortex_potential", "induced_metric", "minimize_shape", "reference_metric_with_defects",
    "solve_single_disclination", "solve_von_karman", "strain_tensor", "stress_density",
    "total_energy", "von_karman_residual", "yang_mills_energy",
]
