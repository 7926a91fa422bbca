"""ECG pain-intensity estimation pipeline.

Raw ECG -> Pan-Tompkins QRS detection -> six time-domain HRV features ->
single-task or multi-task dense networks with an uncertainty-weighted joint
loss, evaluated with leave-one-subject-out cross-validation.
"""

from .signal_core import (
    EcgRecord,
    Gender,
    PainLabel,
    SyntheticEcgSpec,
    WaveShape,
    bandpass_filter,
    derivative_filter,
    generate_synthetic_ecg,
    moving_window_integrate,
    square_signal,
)
from .qrs_detect import (
    DetectorConfig,
    DetectorState,
    FlatSignalError,
    QrsResult,
    SignalTooShortError,
    detect_qrs,
    discriminate_twave,
    match_detections,
    update_thresholds,
)
from .hrv_features import (
    AugmentMode,
    FeatureVector,
    IbiSeries,
    InsufficientBeatsError,
    augment_features,
    compute_features,
    compute_ibis,
    normalize_features,
)
from .nn_engine import (
    AdamW,
    DenseLayer,
    Mlp,
    NumericalError,
    WeightEma,
    dense_forward,
    lr_at,
    relu,
    smoothed_cross_entropy,
)
from .models import (
    LossForm,
    MtlLossParams,
    MtNnConfig,
    MultiHeadNet,
    StNnConfig,
    build_mt_nn,
    build_st_nn,
    mt_forward_loss,
    mtl_loss,
)
from .data import Dataset, DataError, Provenance, WindowRecord, generate_synthetic_cohort, load_dataset
from .experiments import (
    FoldReport,
    Method,
    Scheme,
    TaskKind,
    TaskSpec,
    TrainConfig,
    compare_methods,
    make_scheme,
    run_loso,
    run_matrix,
    verify_loso_purity,
)
from .config import ConfigError, ExperimentConfig, load_config

__version__ = "0.1.0"
