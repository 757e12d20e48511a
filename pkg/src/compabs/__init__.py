"""Compositional construction of approximate abstractions for interconnected control systems."""
from .abstraction import Grid, GridAbstraction, GuaranteeInfeasible, abstract_system, quantize, validate_abstraction
from .composition import CompositionParams, ComposedSystem, InterconnectionGraph, check_compatibility, compose
from .core import InputPair, PseudometricSpace, TransitionSystem, inf_distance
from .deltaiss import (
    DeltaIssCertificate,
    Infeasible,
    LinearModel,
    LipschitzModel,
    NotCertifiable,
    certify,
    check_compositional_condition,
    check_shrink_condition,
    linear_certificate,
    lipschitz_certificate,
    min_epsilon,
)
from .relations import (
    Relation,
    check_bisimulation,
    compose_relations,
    max_alternating_simulation,
    max_simulation,
    verify_alternating_simulation,
    verify_simulation,
    widen,
)
from .synthesis import GridController, SafetyController, grid_safety_fixpoint, refine_and_simulate, safety_fixpoint

__version__ = "0.1.0"
