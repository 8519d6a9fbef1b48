"""Almost-sure asymptotics of affine stochastic functional differential equations.

Characteristic-root analysis, resolvents, path simulation, limit
verification and kernel admissibility checks for Volterra and finite-delay
equations with state-independent noise.
"""

__version__ = "0.1.0"

from .measures import Atom, ExpPolyTerm, MeasureRep, laplace_transform, alpha_star  # noqa: E402
from .charspec import (  # noqa: E402
    AlphaNotFound,
    CharFunction,
    Search,
    SpectralData,
    find_roots,
    laurent_coeffs,
    spectral_summary,
)
from .resolvent import ResolventGrid, decompose, leading_part, solve_resolvent  # noqa: E402
from .rng import BrownianDriver  # noqa: E402
from .pathsim import SystemSpec, simulate_em, simulate_voc  # noqa: E402
from .limits import (  # noqa: E402
    PredictedLaw,
    VerificationReport,
    check_intensity_conditions,
    predicted_law,
    realized_multipliers,
    verify_limit,
)
from .ensemble import EnsembleConfig, run_ensemble, verify_ensemble  # noqa: E402
from .admissibility import (  # noqa: E402
    KernelProbe,
    check_as_conditions,
    check_msq_condition,
    empirical_convergence,
)
from .fixtures import FIXTURES, get_fixture  # noqa: E402

__all__ = [
    "Atom",
    "ExpPolyTerm",
    "MeasureRep",
    "laplace_transform",
    "alpha_star",
    "AlphaNotFound",
    "CharFunction",
    "Search",
    "SpectralData",
    "find_roots",
    "laurent_coeffs",
    "spectral_summary",
    "ResolventGrid",
    "decompose",
    "leading_part",
    "solve_resolvent",
    "BrownianDriver",
    "SystemSpec",
    "simulate_em",
    "simulate_voc",
    "PredictedLaw",
    "VerificationReport",
    "check_intensity_conditions",
    "predicted_law",
    "realized_multipliers",
    "verify_limit",
    "EnsembleConfig",
    "run_ensemble",
    "verify_ensemble",
    "KernelProbe",
    "check_as_conditions",
    "check_msq_condition",
    "empirical_convergence",
    "FIXTURES",
    "get_fixture",
]
