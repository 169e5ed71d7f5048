"""Machine-generated-text detection over per-token log-probability backends.

The package is organized around one data contract: a token sequence plus its
per-position predictive log-distributions.  On top of that it provides the
normalized probability-discrepancy detector and classic zero-shot baselines,
desk-scale detector training with exact gradients, reference clustering for
probability calibration, benchmark construction and evaluation machinery,
and a binary file/wire protocol for talking to scoring backends.
"""

from .logprob import (
    DenseRow,
    LengthMismatch,
    LogProbMatrix,
    PositionStats,
    TokenOutOfRange,
    TokenSequence,
    TopKRow,
    position_stats,
    row_entropy,
    topk_project,
    validate,
)
from .discrepancy import (
    ANALYTIC,
    Analytic,
    DiscrepancyScore,
    EmptyDraw,
    MonteCarlo,
    ResampleDraw,
    analytic_moments,
    conditional_discrepancy,
    mc_moments,
    observed_logprob_sum,
    resample,
)
from .baselines import (
    BaselineScore,
    Method,
    Orientation,
    entropy_score,
    fast_detect,
    likelihood,
    log_rank,
    lrr,
)
from .metrics import (
    Label,
    Saturated,
    ScoredLabelSet,
    SingleClass,
    aupr,
    auroc,
    auroc_sweep,
    balanced_accuracy,
    best_balanced_threshold,
    improvement,
    mcc,
    tpr_at_fpr,
)
from .refcluster import (
    BadWindowOrder,
    EmptyReference,
    ReferenceSet,
    build_reference,
    estimate_pm,
    load_reference,
    save_reference,
)
from .toymodel import ToyScoringModel, load_model, save_model, toy_logprob_matrix
from .training import (
    Adam,
    DDLConfig,
    DPOConfig,
    DegenerateBatch,
    NonFiniteLoss,
    SGD,
    SynthCorpora,
    TrainTrace,
    batch_discrepancies,
    ddl_loss,
    dpo_loss,
    synth_task,
    train,
)
from .bench import (
    BenchRecord,
    Domain,
    PoolExhausted,
    RunOptions,
    Scenario,
    Task,
    dig_sig_sample,
    post_clean,
    pre_clean,
    prompt_render,
    run_eval,
    style_pick,
)
from .protocol import (
    BackendClient,
    BackendServer,
    BadMagic,
    BadResponse,
    LogProbRequest,
    ToyBackend,
    TransportError,
    Truncated,
    decode,
    encode,
    fetch,
    load_matrix,
    save_matrix,
)

__version__ = "0.1.0"
