"""Weight-constrained anisotropic clustering with deterministic coresets."""
from .core import (
    Clustering,
    DimensionError,
    InfeasibleBoundsError,
    NormFamily,
    SiteSet,
    WCAError,
    WeightBounds,
    WeightedDataSet,
    centroid_and_weight,
    centroids,
    cost,
    distance_matrix,
    opt_site_cost,
    variation,
)
from .assign import (
    AnisotropicDiagram,
    Compatibility,
    DegeneracyError,
    MergingFunction,
    check_compatibility,
    extend,
    extract_diagram,
    push_forward,
    solve_assignment,
)
from .approx import ab_approximate, alternate_sites, opt_bruteforce
from .coreset import Coreset, CoresetConfig, build_coreset, build_epsilon_net, compose

__version__ = "0.1.0"
