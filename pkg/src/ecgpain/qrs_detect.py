"""Pan-Tompkins decision stage: adaptive thresholds, search-back, T-wave rejection.

The detector runs the filter cascade from :mod:`ecgpain.signal_core`, finds
candidate peaks in the integrated signal, and classifies each one with the
classic running signal/noise peak estimates. Two threshold streams are
tracked (integrated and band-passed) and a candidate must clear both to be
accepted outright. If no beat is found within ``searchback_factor`` times
the running RR average, the gap is rescanned at half thresholds; the
rescan accepts a candidate that clears threshold2 in either stream, because
the integrated stream scales with the square of the beat amplitude and
loses attenuated beats that are still obvious in the band-passed stream.

Detected peaks are refined to the raw-signal local maximum near the
delay-compensated detection point so that inter-beat intervals are measured
on true R waves.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import signal as sps

from .signal_core import (
    DERIVATIVE_DELAY_SAMPLES,
    EcgRecord,
    SignalError,
    bandpass_filter,
    bandpass_group_delay,
    derivative_filter,
    moving_window_integrate,
    square_signal,
)


class SignalTooShortError(SignalError):
    """Record shorter than the detector warm-up window."""


class FlatSignalError(SignalError):
    """Zero-variance record; detection is meaningless, not empty."""


class PeakClass(Enum):
    QRS = "qrs"
    T_WAVE = "twave"


@dataclass(frozen=True)
class DetectorConfig:
    """Tunable detector parameters (classic Pan-Tompkins defaults)."""

    band_low_hz: float = 5.0
    band_high_hz: float = 15.0
    filter_order: int = 2
    integration_window_ms: float = 150.0
    refractory_ms: float = 200.0
    twave_window_ms: float = 360.0
    searchback_factor: float = 1.66
    refine_window_ms: float = 40.0
    warmup_s: float = 2.0

    def __post_init__(self):
        if self.refractory_ms <= 0:
            raise SignalError("refractory must be positive")
        if self.searchback_factor <= 1.0:
            raise SignalError("searchback_factor must exceed 1")


@dataclass
class DetectorState:
    """Running threshold state for one signal stream."""

    spk: float
    npk: float
    threshold1: float = 0.0
    threshold2: float = 0.0
    rr_avg1: float = 0.0
    rr_avg2: float = 0.0
    last_qrs_index: int = -1
    refractory_samples: int = 1

    def __post_init__(self):
        if self.refractory_samples <= 0:
            raise SignalError("refractory_samples must be positive")
        self._recompute()

    def _recompute(self):
        self.threshold1 = self.npk + 0.25 * (self.spk - self.npk)
        self.threshold2 = 0.5 * self.threshold1


def update_thresholds(
    state: DetectorState, peak_value: float, is_signal_peak: bool
) -> DetectorState:
    """Fold one classified peak into the running estimates.

    Signal peaks update spk, noise peaks update npk, both with the classic
    1/8 forgetting factor; thresholds are recomputed from the new estimates.
    Returns a new state.
    """
    if peak_value < 0:
        raise SignalError("peak_value must be >= 0")
    new = replace(state)
    if is_signal_peak:
        new.spk = 0.125 * peak_value + 0.875 * state.spk
    else:
        new.npk = 0.125 * peak_value + 0.875 * state.npk
    new._recompute()
    return new


def discriminate_twave(
    candidate_index: int,
    last_qrs_index: int,
    slope_candidate: float,
    slope_last_qrs: float,
    sample_rate: float,
    twave_window_ms: float = 360.0,
) -> PeakClass:
    """Classify a candidate close to the previous beat as QRS or T wave.

    A candidate within the T-wave window whose maximal slope is less than
    half the previous QRS slope is a repolarization wave, not a beat.
    """
    if candidate_index <= last_qrs_index:
        raise SignalError("candidate must come after the last QRS")
    gap_ms = (candidate_index - last_qrs_index) / sample_rate * 1000.0
    if gap_ms < twave_window_ms and slope_candidate < 0.5 * slope_last_qrs:
        return PeakClass.T_WAVE
    return PeakClass.QRS


@dataclass
class QrsResult:
    """Detected R peaks plus detector diagnostics."""

    r_indices: np.ndarray
    searchback_count: int = 0
    rejected_twave_count: int = 0
    threshold1: float = 0.0
    threshold2: float = 0.0

    def __post_init__(self):
        self.r_indices = np.asarray(self.r_indices, dtype=np.int64)
        if np.any(np.diff(self.r_indices) <= 0):
            raise SignalError("r_indices must be strictly increasing")
        if self.searchback_count < 0 or self.rejected_twave_count < 0:
            raise SignalError("diagnostic counts must be >= 0")


@dataclass
class DetectionStages:
    """Intermediate signals of one detection pass, for inspection dumps."""

    raw: np.ndarray
    bandpassed: np.ndarray
    derivative: np.ndarray
    squared: np.ndarray
    integrated: np.ndarray


@dataclass
class _Candidate:
    loc: int
    integrated: float
    filtered: float
    slope: float


def detect_qrs(
    record: EcgRecord,
    config: DetectorConfig = DetectorConfig(),
    return_stages: bool = False,
):
    """Run the full detector on one record.

    Returns a :class:`QrsResult`; with ``return_stages`` a
    ``(QrsResult, DetectionStages)`` pair. Detection is deterministic and
    invariant to positive rescaling of the input (the signal is normalized
    by its peak amplitude and every threshold is derived from the data).
    """
    fs = record.sample_rate
    x = np.asarray(record.samples, dtype=np.float64)
    n_warm = int(round(config.warmup_s * fs))
    if x.size < n_warm:
        raise SignalTooShortError(
            f"record has {x.size} samples; need >= {n_warm} ({config.warmup_s} s)"
        )
    x = x - x.mean()
    peak = np.abs(x).max()
    if peak == 0.0:
        raise FlatSignalError("flat-line record (zero variance)")
    x = x / peak

    n_int = max(1, int(round(config.integration_window_ms / 1000.0 * fs)))
    refractory = max(1, int(round(config.refractory_ms / 1000.0 * fs)))
    tw_samples = config.twave_window_ms / 1000.0 * fs
    refine_w = max(1, int(round(config.refine_window_ms / 1000.0 * fs)))

    filtered = bandpass_filter(x, fs, config.band_low_hz, config.band_high_hz, config.filter_order)
    deriv = derivative_filter(filtered, fs)
    squared = square_signal(deriv)
    integrated = moving_window_integrate(squared, n_int)

    # fixed pipeline lag between an R wave and its integrated-signal peak
    delay = int(
        round(
            DERIVATIVE_DELAY_SAMPLES
            + (n_int - 1) / 2
            + bandpass_group_delay(fs, config.band_low_hz, config.band_high_hz, config.filter_order)
        )
    )

    locs, _ = sps.find_peaks(integrated, distance=refractory)

    st_i = DetectorState(
        spk=0.25 * float(integrated[:n_warm].max()),
        npk=0.5 * float(integrated[:n_warm].mean()),
        refractory_samples=refractory,
    )
    st_f = DetectorState(
        spk=0.25 * float(filtered[:n_warm].max()),
        npk=0.5 * float(np.abs(filtered[:n_warm]).mean()),
        refractory_samples=refractory,
    )

    def filtered_peak(loc: int) -> float:
        return float(filtered[max(0, loc - n_int) : loc + 1].max())

    def slope_at(loc: int) -> float:
        return float(np.abs(deriv[max(0, loc - n_int) : loc + 1]).max())

    def refine(loc: int) -> int:
        center = loc - delay
        a = max(0, center - refine_w)
        b = min(x.size, center + refine_w + 1)
        return a + int(np.argmax(x[a:b]))

    accepted: list[int] = []
    refined: list[int] = []
    rr_recent: list[int] = []
    last_slope = 0.0
    searchback_count = 0
    twave_count = 0
    pending: list[_Candidate] = []

    def accept(cand: _Candidate, via_searchback: bool):
        nonlocal st_i, st_f, last_slope
        if via_searchback:
            # classic halves the forgetting horizon for search-back hits
            st_i = replace(st_i, spk=0.25 * cand.integrated + 0.75 * st_i.spk)
            st_i._recompute()
            st_f = replace(st_f, spk=0.25 * cand.filtered + 0.75 * st_f.spk)
            st_f._recompute()
        else:
            st_i = update_thresholds(st_i, cand.integrated, is_signal_peak=True)
            st_f = update_thresholds(st_f, cand.filtered, is_signal_peak=True)
        if accepted:
            rr_recent.append(cand.loc - accepted[-1])
            del rr_recent[:-8]
            avg = float(np.mean(rr_recent))
            st_i.rr_avg1 = st_i.rr_avg2 = avg
            st_f.rr_avg1 = st_f.rr_avg2 = avg
        st_i.last_qrs_index = st_f.last_qrs_index = cand.loc
        last_slope = cand.slope
        accepted.append(cand.loc)
        refined.append(refine(cand.loc))

    def reject(cand: _Candidate):
        nonlocal st_i, st_f
        st_i = update_thresholds(st_i, cand.integrated, is_signal_peak=False)
        st_f = update_thresholds(st_f, cand.filtered, is_signal_peak=False)
        pending.append(cand)

    def searchback(upto: int) -> bool:
        nonlocal searchback_count
        best = None
        for cand in pending:
            if cand.loc - st_i.last_qrs_index < refractory or upto - cand.loc < refractory:
                continue
            if cand.integrated > st_i.threshold2 or cand.filtered > st_f.threshold2:
                if best is None or cand.integrated > best.integrated:
                    best = cand
        if best is None:
            return False
        searchback_count += 1
        loc = best.loc
        accept(best, via_searchback=True)
        pending[:] = [c for c in pending if c.loc > loc]
        return True

    for loc in locs:
        cand = _Candidate(int(loc), float(integrated[loc]), filtered_peak(int(loc)), slope_at(int(loc)))
        gap_limit = config.searchback_factor * st_i.rr_avg2
        if accepted and st_i.rr_avg2 > 0 and cand.loc - st_i.last_qrs_index > gap_limit:
            searchback(cand.loc)
        is_qrs = cand.integrated > st_i.threshold1 and cand.filtered > st_f.threshold1
        if is_qrs and accepted and cand.loc - st_i.last_qrs_index < refractory:
            is_qrs = False
        if is_qrs and accepted and cand.loc - st_i.last_qrs_index < tw_samples:
            if (
                discriminate_twave(
                    cand.loc,
                    st_i.last_qrs_index,
                    cand.slope,
                    last_slope,
                    fs,
                    config.twave_window_ms,
                )
                is PeakClass.T_WAVE
            ):
                is_qrs = False
                twave_count += 1
        if is_qrs:
            accept(cand, via_searchback=False)
            pending.clear()
        else:
            reject(cand)

    # a gap may extend past the last candidate to the end of the record
    if accepted and st_i.rr_avg2 > 0 and x.size - st_i.last_qrs_index > config.searchback_factor * st_i.rr_avg2:
        searchback(x.size + refractory)

    # refinement shifts peaks by up to the refine window; enforce the
    # refractory invariant on the final raw-domain indices
    final: list[int] = []
    for r in sorted(refined):
        if not final or r - final[-1] >= refractory:
            final.append(r)

    result = QrsResult(
        r_indices=np.asarray(final, dtype=np.int64),
        searchback_count=searchback_count,
        rejected_twave_count=twave_count,
        threshold1=st_i.threshold1,
        threshold2=st_i.threshold2,
    )
    if return_stages:
        stages = DetectionStages(
            raw=np.asarray(record.samples, dtype=np.float64),
            bandpassed=filtered,
            derivative=deriv,
            squared=squared,
            integrated=integrated,
        )
        return result, stages
    return result


def match_detections(
    detected: np.ndarray,
    ground_truth: np.ndarray,
    sample_rate: float,
    tolerance_ms: float = 25.0,
    skip_s: float = 2.0,
) -> dict:
    """Score detections against known R positions.

    Greedy one-to-one matching within the tolerance. The first ``skip_s``
    seconds are excluded from scoring (filter transient and threshold
    warm-up region). Returns sensitivity / positive predictivity and the
    matched localization errors in milliseconds.
    """
    tol = tolerance_ms / 1000.0 * sample_rate
    gt = np.asarray(ground_truth)[np.asarray(ground_truth) >= skip_s * sample_rate]
    det = np.asarray(detected)[np.asarray(detected) >= skip_s * sample_rate]
    used = np.zeros(det.size, dtype=bool)
    errors_ms = []
    for g in gt:
        if det.size == 0:
            break
        dist = np.abs(det - g).astype(np.float64)
        dist[used] = np.inf
        j = int(np.argmin(dist))
        if dist[j] <= tol:
            used[j] = True
            errors_ms.append((det[j] - g) / sample_rate * 1000.0)
    tp = len(errors_ms)
    return {
        "true_positives": tp,
        "false_negatives": int(gt.size - tp),
        "false_positives": int(det.size - tp),
        "sensitivity": tp / gt.size if gt.size else 0.0,
        "positive_predictivity": tp / det.size if det.size else 0.0,
        "errors_ms": np.asarray(errors_ms),
    }
