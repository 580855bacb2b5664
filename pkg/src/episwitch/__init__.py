"""Multitype SIS epidemics in randomly switched environments.

Simulation of the finite-population chain and of its switched-ODE limit,
Lyapunov and moment Lyapunov exponents of the linearisation at the
disease-free state, and exact quasi-stationary distributions.
"""

__version__ = "0.1.0"

from .chain import (
    ChainPath,
    ChainState,
    CoupledPaths,
    ExtinctionSummary,
    coupled_paths,
    extinction_times,
    monte_carlo_extinction,
    simulate_chain,
)
from .config import REFERENCE, load_model, model_from_dict, model_to_dict, reference_model, two_env_model
from .errors import (
    DomainError,
    EpiswitchError,
    InconsistencyError,
    IntegrationError,
    ModelError,
    NumericalError,
    SizeError,
    UnsupportedModelError,
)
from .lyapunov import (
    GCurve,
    GEstimate,
    LambdaEstimate,
    MomentSampler,
    MonteCarloParams,
    ThresholdResult,
    estimate_g,
    estimate_lambda,
    estimate_pstar,
    estimate_pstar_lower,
    g_curve,
    probe_zero_accessibility,
)
from .model import (
    AffineSwitch,
    ModelSpec,
    group_sizes,
    linearization_at_zero,
    linearizations,
    monotone_flags,
    transition_rates,
    validate_model,
    vector_field,
)
from .pdmp import (
    integrate_flow,
    simulate_angular,
    simulate_linear,
    simulate_pdmp,
    simulate_polar,
)
from .qsd import (
    QsdResult,
    StateIndex,
    bin_qsd,
    build_killed_generator,
    compute_qsd,
    enumerate_states,
    pdmp_stationary_estimate,
    qsd_ladder,
    qsd_mass_below,
    qsd_moment,
    sample_qsd,
)
from .rng import RngStream, derive_seed
from .spectral import g_exact_1d, hilbert_distance, lambda_exact_1d, perron, stationary_env
