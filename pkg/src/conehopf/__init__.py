"""Free energies of finite-rank tensor inference models, exactly at finite
size and via their variational (sup-inf) limit formulas on the PSD cone."""

from .errors import (
    CapExceededError,
    ConehopfError,
    InternalError,
    NotPsdError,
    RadiusExhaustedError,
    UnboundedObjectiveError,
    ValidationError,
)
from .free_energy import (
    FreeEnergyEstimate,
    GibbsSummary,
    ResidualEstimate,
    free_energy_samples,
    gibbs_derivative_samples,
    gibbs_derivatives,
    hj_residual_n,
    log_partition,
    mean_free_energy,
)
from .hj_checker import (
    ConvergenceReport,
    GridSpec,
    MonotoneGradientReport,
    ResidualReport,
    convergence_report,
    fd_partials,
    monotone_gradient_check,
    residual_grid,
    sym_basis,
)
from .hopf import (
    HopfResult,
    OrthantHopfResult,
    SolverConfig,
    check_diagonal_dependence,
    hopf_diagonal,
    hopf_diagonal_for_model,
    hopf_lax_1d,
    hopf_value,
    inner_inf,
    layered_reduced,
)
from .initial_condition import (
    InitialCondition,
    ScalarConvexFunction,
    conjugate_1d,
    conjugate_1d_with_argmax,
    grad_psi,
    psi,
    psi_with_error,
    scalar_layer,
)
from .model import (
    DiscretePrior,
    Disorder,
    InteractionSpec,
    adjacent_pairs_spec,
    diagonal_indicator_spec,
    draw_disorder,
    grad_h,
    grad_h_frobenius,
    hamiltonian,
    load_model,
    load_model_dict,
    nonlinearity_h,
    nonlinearity_h_batch,
    overlap_identity_check,
    product_prior,
    rademacher_prior,
    single_atom_prior,
)
from .symcone import (
    EigenDecomposition,
    SymMatrix,
    condition_number,
    eig_sym,
    frobenius_dot,
    frobenius_norm,
    is_psd,
    loewner_leq,
    pack_upper,
    psd_project,
    sqrt_psd,
    unpack_upper,
)

__version__ = "0.1.0"
