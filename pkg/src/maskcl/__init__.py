"""Continual learning with binary supermasks over a frozen random network.

A fixed signed-constant MLP never trains; each task instead learns a
binary mask selecting a subnetwork. When task identity is hidden at test
time it is inferred by gradient descent over a superposition of the
learned masks, and masks can further be stored implicitly as attractors
of a constant-size associative memory.
"""

from .batche import (
    FastWeights,
    SharedTrunk,
    abatche_infer,
    batche_forward,
    batche_oneshot,
    batche_train_task,
    build_trunk,
    init_fast_weights,
    max_conf_metric,
)
from .data import (
    BaseDataset,
    TaskDataset,
    load_idx,
    load_mnist,
    make_permuted,
    make_rotated,
    make_split,
    make_synthetic,
    standardize_task,
    stream_batches,
)
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    DomainError,
    FormatError,
    InvalidStateError,
    MaskclError,
    ResourceError,
)
from .estimator import SupermaskClassifier
from .harness import (
    MetricsRecord,
    ScenarioConfig,
    evaluate,
    mask_accuracy,
    run_abatche,
    run_gg,
    run_gnu,
    run_hopfield,
    run_nns,
    train_mask_sequence,
)
from .hopfield import (
    HopfieldStore,
    RecoveryResult,
    energy,
    energy_grad,
    hebbian_update,
    mask_to_spins,
    nearest_pattern,
    recover_mask,
    spins_to_mask,
    store_pattern,
    storkey_update,
    update_mean,
)
from .inference import (
    AllocationDecision,
    alpha_descent,
    binary_infer,
    entropy,
    g_objective,
    g_objective_grad,
    gamma_infer,
    nns_decision,
    one_shot,
)
from .masks import MaskBank, Supermask, combine_masks, uniform_alpha
from .net import (
    ENTROPY,
    GSUMEXP,
    FixedNet,
    ForwardCache,
    NetConfig,
    build_fixed_net,
    forward_masked,
    forward_superposed,
    grad_alpha,
    predict_labels,
    superposed_objective,
)
from .serialization import (
    StorageReport,
    deserialize_mask,
    load_snapshot,
    mask_storage_bytes,
    save_snapshot,
    serialize_mask,
    storage_report,
)
from .training import (
    RmspropState,
    ScoreTensor,
    binarize,
    binarize_threshold,
    binarize_topk,
    default_score_init,
    rmsprop_step,
    score_gradient,
    train_task,
    transfer_init,
)

__version__ = "0.1.0"
