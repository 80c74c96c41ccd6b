"""Low-rank CP approximation of the Clebsch-Gordan tensor product for
SO(3)-equivariant feature fusion."""

from .analysis import (
    ErrorReport,
    RankSchedule,
    SweepOptions,
    approximation_error,
    benchmark_tp,
    equivariance_error,
    sweep,
    theorem1_bound,
    universality_factorize,
)
from .cgtp import (
    CGTensor,
    SharedWeightTP,
    apply_cp,
    apply_cp_batched,
    apply_cp_multiorder,
    build_cg_tensor,
    exact_tp,
    shared_weight_tp,
)
from .errors import ArgumentError, NumericalError
from .so3 import IrrepsSpec, Path, Rotation, cg_coefficient, sample_rotation, wigner_block, wigner_d
from .tensor3 import CPFactors, Tensor3, cp_als, load_cpf, matricize, reconstruct, save_cpf, singular_tail

__version__ = "0.1.0"
