"""flowcrypt: flow-model data encryption with orthogonal feature keys,
an executable recovery-bound audit, and a gradient-leakage simulator."""

from .crypt import (
    ClasswiseContext,
    DualKeyContext,
    EncryptedDataset,
    EncryptionContext,
    decrypt_sample,
    dual_key_label,
    encrypt_dataset,
    encrypt_sample,
    load_context,
    save_context,
)
from .errors import (
    CorruptFileError,
    DegenerateDataError,
    FlowcryptError,
    InvalidArgumentError,
    ShapeMismatchError,
)
from .flow import (
    ActNorm,
    AffineCoupling,
    FlowModel,
    InvertibleLinear,
    LatentVector,
    actnorm_init,
    bits_per_dim,
    build_default_flow,
    dequantize,
    dequantize_inverse,
    flow_forward,
    flow_inverse,
    layer_forward,
    layer_inverse,
    log_prob,
)
from .leakage import (
    DlgConfig,
    DlgResult,
    GradientVector,
    LinearRegressionVictim,
    ToyClassifier,
    compute_gradients,
    dlg_attack,
    federated_step,
)
from .linalg import (
    BallSpec,
    OrthogonalKey,
    ball_radius_for_volume,
    frobenius_distance,
    is_successful_recovery,
    sample_haar_orthogonal,
)
from .security import (
    AuditReport,
    FeatureSamples,
    TVEstimate,
    recover_rotation_mle,
    rotation_invariance_check,
    sandwich_check,
    theorem_bound_audit,
    tv_analytic_gaussian,
    tv_empirical,
)
from .train import (
    OptimizerState,
    ParamGradients,
    TrainConfig,
    backward,
    nll_loss,
    optimizer_step,
    train_flow,
)

__version__ = "0.1.0"
