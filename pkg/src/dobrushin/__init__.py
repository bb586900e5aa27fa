"""Dobrushin ergodicity coefficients and perturbation bounds for Markov
operators on ordered spaces with a base: stochastic matrices, p-norm cones
and quantum channels."""

from .errors import (
    CertificationError,
    DegenerateInputError,
    DobrushinError,
    MalformedError,
    NoFixedPointError,
    NumericalFailure,
    PreconditionError,
)
from .spaces import (
    Element,
    SpaceDescriptor,
    barycenter,
    base_norm,
    classical,
    cone_contains,
    element,
    extreme_points,
    from_matrix,
    functional_f,
    in_base,
    jordan_decompose,
    lemma32_decompose,
    pcone,
    quantum,
)
from .operators import (
    DeltaEstimate,
    MarkovOperator,
    amplitude_damping,
    dobrushin_delta,
    delta_coefficient,
    from_kraus,
    identity,
    mixture_with_fixed_point,
    operator_from_json,
    operator_norm,
    power_and_cesaro,
    rank_one,
    validate_markov,
)
from .ergodicity import (
    ErgodicityReport,
    classify,
    find_contractive_power,
    find_mean_contractive,
    fixed_point,
    geometric_envelope,
    openness_radius,
)
from .perturbation import (
    PerturbationReport,
    TransferResult,
    bound_delta_based,
    bound_eq5,
    bound_eq6,
    bound_eq7,
    bound_eq9,
    bound_eq14,
    bound_floor_based,
    bound_per62,
    bound_rate_based,
    neumann_inverse_on_N,
    stability_transfer,
    tightness_report,
)
from .harness import (
    ExperimentConfig,
    density_experiment,
    perturb_toward,
    random_markov,
    run_property_suite,
    tightness_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "CertificationError",
    "DegenerateInputError",
    "DobrushinError",
    "MalformedError",
    "NoFixedPointError",
    "NumericalFailure",
    "PreconditionError",
    "Element",
    "SpaceDescriptor",
    "barycenter",
    "base_norm",
    "classical",
    "cone_contains",
    "element",
    "extreme_points",
    "from_matrix",
    "functional_f",
    "in_base",
    "jordan_decompose",
    "lemma32_decompose",
    "pcone",
    "quantum",
    "DeltaEstimate",
    "MarkovOperator",
    "amplitude_damping",
    "dobrushin_delta",
    "delta_coefficient",
    "from_kraus",
    "identity",
    "mixture_with_fixed_point",
    "operator_from_json",
    "operator_norm",
    "power_and_cesaro",
    "rank_one",
    "validate_markov",
    "ErgodicityReport",
    "classify",
    "find_contractive_power",
    "find_mean_contractive",
    "fixed_point",
    "geometric_envelope",
    "openness_radius",
    "PerturbationReport",
    "TransferResult",
    "bound_delta_based",
    "bound_eq5",
    "bound_eq6",
    "bound_eq7",
    "bound_eq9",
    "bound_eq14",
    "bound_floor_based",
    "bound_per62",
    "bound_rate_based",
    "neumann_inverse_on_N",
    "stability_transfer",
    "tightness_report",
    "ExperimentConfig",
    "density_experiment",
    "perturb_toward",
    "random_markov",
    "run_property_suite",
    "tightness_experiment",
]
