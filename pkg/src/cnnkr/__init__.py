"""Exact linearization of (compressed) CNNs into composite weight tensors,
sample-complexity and parameter-count measures, the K/R redundancy audit, and
the desk-scale scaling-law studies."""

from .complexity import (
    BlockDesign,
    ComplexityReport,
    block_report,
    block_to_ranks,
    cp_report,
    kr_classify,
    naive_count_cp,
    naive_count_tucker,
    naive_count_uncompressed,
    parse_network_spec,
    sample_complexity_cp,
    sample_complexity_tucker,
    sample_complexity_uncompressed,
    tucker_report,
)
from .decomposition import (
    CpForm,
    TuckerForm,
    cp_als,
    hooi_refine,
    hosvd,
    random_cp,
    random_tucker,
    tucker_reconstruct,
)
from .estimation import (
    CpParam,
    Dataset,
    FreeParam,
    TrainConfig,
    TrainingDiverged,
    TuckerParam,
    train_least_squares,
    train_logistic,
    train_multiclass,
)
from .kernels import BACKEND
from .linearize import (
    ConvPoolSpec,
    KernelBank,
    LinearizedModel,
    build_composite,
    build_composite_5layer,
    forward_oracle,
    forward_oracle_5layer,
    positioning_matrix,
    pooled_factor,
    reparameterize_cp,
    reparameterize_tucker,
    split_stack,
    stack_kernels,
    transform_input,
)
from .tensor_ops import (
    fold,
    fold_vec,
    frobenius,
    inner,
    kronecker,
    mode_product,
    outer,
    unfold,
    vectorize,
)

__version__ = "0.1.0"
