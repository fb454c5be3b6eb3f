"""Numerics for the entropy of causal fermion systems.

Discrete operator-valued spacetimes, the spectral pair Lagrangian and causal
action, nonlinear surface layer integrals, Monte Carlo on the unitary group's
time-fixing slice, and the constrained-entropy optimizers built on top.
"""

from .configuration import (
    CutoffSpec,
    DiscreteConfiguration,
    PastSet,
    SpacetimeAtom,
    apply_cutoff,
    build_static_vacuum,
    past_fraction,
    past_mask,
    perturb,
    pushforward,
)
from .entropy import (
    EnsembleSettings,
    EntropyReport,
    PairKernels,
    admiss_tol,
    admissibility_residual,
    build_ensemble,
    default_beta_grid,
    entropy_dt_limit,
    entropy_functional,
    entropy_static,
    exhaustion_sweep,
    hypothesis_diagnostics,
    lagrange_c,
    optimality_residual,
    optimize_configuration,
    partition_function,
    project_admissible,
    second_variation_probe,
    ttr_check,
    ttr_check_tilde,
)
from .group import (
    GroupElement,
    SliceEnsemble,
    SliceSample,
    haar_sample,
    load_ensemble,
    make_unitary,
    normalized_integral,
    project_to_slice,
    save_ensemble,
    slice_ensemble,
    slice_residual,
    subgroup_restriction,
    time_translation,
)
from .lagrangian import (
    ModelParams,
    calibrate_s,
    causal_action,
    el_residual,
    ell,
    kappa_lagrangian,
)
from .local import RegionSpec, entanglement_entropy, local_entropy
from .operators import (
    ClosedChainSpectrum,
    OperatorPoint,
    closed_chain_spectrum,
    conjugate,
    make_point,
    random_point,
    spin_intersection_dim,
    spin_space_dim,
)
from .surface_layer import (
    SurfaceLayerValue,
    gamma,
    gamma_dt_kernel,
    gamma_local,
    gamma_soft,
    gamma_tt,
    improper_convergence_report,
)

__version__ = "0.1.0"
