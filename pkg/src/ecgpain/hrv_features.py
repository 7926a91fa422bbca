"""Inter-beat intervals and the six time-domain HRV features.

Feature order everywhere: mean IBI, RMSSD, SDNN, IBI regression slope,
SDNN/RMSSD ratio, heart rate. Demographic augmentation appends gender
(Male=0, Female=1) and/or age in years; z-scoring happens later, per
training fold, so the raw entries keep their natural units here.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .signal_core import Gender, SignalError


class InsufficientBeatsError(SignalError):
    """Fewer than three R peaks; RMSSD needs at least two IBIs."""


class AugmentMode(Enum):
    NONE = "none"
    GENDER = "G"
    AGE = "A"
    GENDER_AGE = "GA"


BASE_FEATURE_NAMES = (
    "mean_ibi_ms",
    "rmssd_ms",
    "sdnn_ms",
    "ibi_slope_ms_per_beat",
    "sdnn_rmssd_ratio",
    "heart_rate_bpm",
)


@dataclass
class IbiSeries:
    """Milliseconds between consecutive R peaks."""

    ibis_ms: np.ndarray

    def __post_init__(self):
        self.ibis_ms = np.asarray(self.ibis_ms, dtype=np.float64)
        if self.ibis_ms.size < 2:
            raise InsufficientBeatsError("need at least 2 inter-beat intervals")
        if np.any(self.ibis_ms <= 0):
            raise SignalError("all IBIs must be positive")


@dataclass
class FeatureVector:
    mean_ibi_ms: float
    rmssd_ms: float
    sdnn_ms: float
    ibi_slope_ms_per_beat: float
    sdnn_rmssd_ratio: float
    heart_rate_bpm: float
    gender_feature: float | None = None
    age_feature: float | None = None
    # RMSSD was zero, so the ratio is reported as 0 by convention
    degenerate_ratio: bool = False

    def as_array(self) -> np.ndarray:
        vals = [
            self.mean_ibi_ms,
            self.rmssd_ms,
            self.sdnn_ms,
            self.ibi_slope_ms_per_beat,
            self.sdnn_rmssd_ratio,
            self.heart_rate_bpm,
        ]
        if self.gender_feature is not None:
            vals.append(self.gender_feature)
        if self.age_feature is not None:
            vals.append(self.age_feature)
        arr = np.asarray(vals, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise SignalError("feature vector contains non-finite entries")
        return arr

    def __len__(self) -> int:
        return 6 + (self.gender_feature is not None) + (self.age_feature is not None)


def compute_ibis(r_indices: np.ndarray, sample_rate: float) -> IbiSeries:
    """Convert R-peak sample indices to inter-beat intervals in ms."""
    idx = np.asarray(r_indices, dtype=np.float64)
    if idx.size < 3:
        raise InsufficientBeatsError(f"need >= 3 R peaks, got {idx.size}")
    if np.any(np.diff(idx) <= 0):
        raise SignalError("r_indices must be strictly increasing")
    return IbiSeries(np.diff(idx) / sample_rate * 1000.0)


def compute_features(
    ibis: IbiSeries,
    sdnn_ddof: int = 0,
    slope_axis: str = "index",
) -> FeatureVector:
    """The six HRV features of one stimulus window.

    ``sdnn_ddof=0`` gives the population standard deviation (default);
    ``slope_axis`` selects the regressor for the IBI trend: beat index
    (default) or cumulative time in seconds.
    """
    x = ibis.ibis_ms
    mean = float(np.mean(x))
    sdnn = float(np.std(x, ddof=sdnn_ddof))
    diffs = np.diff(x)
    rmssd = float(np.sqrt(np.mean(diffs**2)))
    if slope_axis == "index":
        t = np.arange(x.size, dtype=np.float64)
    elif slope_axis == "time":
        t = np.concatenate([[0.0], np.cumsum(x[:-1])]) / 1000.0
    else:
        raise SignalError(f"unknown slope_axis {slope_axis!r}")
    slope = float(np.polyfit(t, x, 1)[0])
    degenerate = rmssd == 0.0
    ratio = 0.0 if degenerate else sdnn / rmssd
    return FeatureVector(
        mean_ibi_ms=mean,
        rmssd_ms=rmssd,
        sdnn_ms=sdnn,
        ibi_slope_ms_per_beat=slope,
        sdnn_rmssd_ratio=ratio,
        heart_rate_bpm=60000.0 / mean,
        degenerate_ratio=degenerate,
    )


def augment_features(
    fv: FeatureVector,
    mode: AugmentMode,
    gender: Gender | None = None,
    age: int | None = None,
) -> FeatureVector:
    """Append demographic entries: gender as {0, 1}, age in years."""
    if mode is AugmentMode.NONE:
        return fv
    gender_feature = fv.gender_feature
    age_feature = fv.age_feature
    if mode in (AugmentMode.GENDER, AugmentMode.GENDER_AGE):
        if gender is None:
            raise SignalError(f"augmentation {mode.value} needs a gender")
        gender_feature = 0.0 if gender is Gender.MALE else 1.0
    if mode in (AugmentMode.AGE, AugmentMode.GENDER_AGE):
        if age is None:
            raise SignalError(f"augmentation {mode.value} needs an age")
        age_feature = float(age)
    return FeatureVector(
        mean_ibi_ms=fv.mean_ibi_ms,
        rmssd_ms=fv.rmssd_ms,
        sdnn_ms=fv.sdnn_ms,
        ibi_slope_ms_per_beat=fv.ibi_slope_ms_per_beat,
        sdnn_rmssd_ratio=fv.sdnn_rmssd_ratio,
        heart_rate_bpm=fv.heart_rate_bpm,
        gender_feature=gender_feature,
        age_feature=age_feature,
        degenerate_ratio=fv.degenerate_ratio,
    )


def normalize_features(
    train_set: np.ndarray, apply_set: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Z-score both sets using statistics of the training set only.

    Zero-variance dimensions pass through unscaled (divisor 1). Returns
    ``(train_normalized, apply_normalized, mean, std)``.
    """
    train = np.asarray(train_set, dtype=np.float64)
    if train.size == 0:
        raise SignalError("empty training set")
    if train.ndim != 2:
        raise SignalError("expected a 2-D (samples x features) array")
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    apply_arr = np.asarray(apply_set, dtype=np.float64)
    return (train - mean) / std, (apply_arr - mean) / std, mean, std
