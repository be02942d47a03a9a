"""Hierarchically sparse recovery from Kronecker measurements (HiHTP) and
brute-force RIP/HiRIP certification."""

__version__ = "0.1.0"

from .certify import (
    CostEstimate,
    RipReport,
    certify_kron_power,
    estimate_cert_cost,
    hirip_bound_from_factors,
    hirip_constant,
    jokar_mehrmann_check,
    jokar_mehrmann_values,
    rip_constant,
)
from .ensembles import EnsembleSpec, derive_seed, sample_matrix, sample_noise, sample_signal
from .errors import BudgetExceeded, DomainError, NumericalError, StructuralError
from .hierarchy import (
    HierarchicalSupport,
    HierarchySpec,
    count_supports,
    enumerate_supports,
    flatten,
    validate_support,
)
from .hihtp import GuaranteeReport, HihtpOptions, RecoveryResult, check_guarantee, recover
from .linop import DenseOperator, FlipOperator, KroneckerOperator, read_mat1, write_mat1
from .projection import ProjectionResult, project, project_bruteforce
