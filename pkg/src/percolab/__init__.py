"""Monte Carlo laboratory for critical bond percolation on Z^d and the incipient infinite cluster."""
from .configuration import ConfigKey, ExplicitEdges, RandomEdges, derive_replica_key, edge_state
from .explorer import (
    BACKEND,
    ClusterView,
    ExploreLimits,
    arm_depth,
    backbone_edges,
    explore,
    observables,
    short_arm_event,
)
from .lattice import Edge, LatticeSpec, neighbors, shell_index
from .oracle import FiniteInstance, enumerate_measure, exact_conditional
from .iic import ArmCondition, PointCondition, cylinder_convergence, sample_conditioned
from .estimators import (
    dyadic_diagnostic,
    estimate_pc,
    fit_scaling,
    growth_curves,
    mc_mean_ci,
    one_arm,
    spectral_dimension,
    tail_curve,
    two_point,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ArmCondition", "ClusterView", "ConfigKey", "Edge", "ExplicitEdges", "ExploreLimits",
    "FiniteInstance", "LatticeSpec", "PointCondition", "RandomEdges", "arm_depth", "backbone_edges",
    "cylinder_convergence", "derive_replica_key", "dyadic_diagnostic", "edge_state",
    "enumerate_measure", "estimate_pc", "exact_conditional", "explore", "fit_scaling",
    "growth_curves", "mc_mean_ci", "neighbors", "observables", "one_arm", "sample_conditioned",
    "shell_index", "short_arm_event", "spectral_dimension", "tail_curve", "two_point",
]
