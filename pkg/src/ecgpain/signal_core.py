"""Core signal types, synthetic ECG generation, and the Pan-Tompkins filter stages.

The filters here are the pre-processing half of the QRS detector: band-pass,
five-point derivative, squaring, and moving-window integration. All of them
are causal with zero initial state, so the first couple of seconds of any
output are transient. Everything is sample-rate generic; the classic
200 Hz integer-coefficient filters are replaced by designs computed for the
actual rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy import signal as sps


class Gender(Enum):
    MALE = "M"
    FEMALE = "F"


class PainLabel(Enum):
    NP = "NP"
    P1 = "P1"
    P2 = "P2"
    P3 = "P3"
    P4 = "P4"

    @property
    def level(self) -> int:
        return list(PainLabel).index(self)


AGE_MIN = 20
AGE_MAX = 65

# physiological floor for RR intervals
MIN_RR_MS = 250.0


class SignalError(ValueError):
    """Invalid signal input (too short, flat, bad parameters)."""


@dataclass
class EcgRecord:
    """One stimulus window of single-channel ECG plus subject metadata."""

    samples: np.ndarray
    sample_rate: float
    subject_id: str
    gender: Gender
    age: int
    pain_label: PainLabel

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise SignalError("samples must be a non-empty 1-D sequence")
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        if not AGE_MIN <= self.age <= AGE_MAX:
            raise SignalError(f"age {self.age} outside [{AGE_MIN}, {AGE_MAX}]")
        if not isinstance(self.gender, Gender):
            raise SignalError("gender must be a Gender")
        if not isinstance(self.pain_label, PainLabel):
            raise SignalError("pain_label must be a PainLabel")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class WaveShape:
    """One Gaussian bump of a PQRST complex, relative to the R center.

    Offset and width are fractions of the local RR interval so the complex
    compresses at high heart rates.
    """

    amplitude: float
    offset_frac: float
    width_frac: float

    def __post_init__(self):
        if self.width_frac <= 0:
            raise SignalError("wave width must be positive")


@dataclass
class SyntheticEcgSpec:
    """Recipe for a synthetic ECG with analytically known R-peak positions."""

    rr_intervals_ms: Sequence[float]
    sample_rate: float = 512.0
    noise_std: float = 0.0
    p_wave: WaveShape = WaveShape(0.15, -0.20, 0.025)
    q_wave: WaveShape = WaveShape(-0.12, -0.025, 0.008)
    r_wave: WaveShape = WaveShape(1.0, 0.0, 0.012)
    s_wave: WaveShape = WaveShape(-0.18, 0.025, 0.008)
    t_wave: WaveShape = WaveShape(0.30, 0.30, 0.06)
    # per-beat R amplitude multipliers (defaults to all ones); used to
    # construct attenuated beats for search-back tests
    r_amplitude_scale: Sequence[float] | None = None

    def __post_init__(self):
        rr = np.asarray(self.rr_intervals_ms, dtype=np.float64)
        if rr.size == 0:
            raise SignalError("rr_intervals_ms must be non-empty")
        if np.any(rr < MIN_RR_MS):
            raise SignalError(f"rr intervals below the {MIN_RR_MS} ms floor")
        if self.noise_std < 0:
            raise SignalError("noise_std must be >= 0")
        if self.sample_rate <= 0:
            raise SignalError("sample_rate must be positive")
        if self.r_amplitude_scale is not None and len(self.r_amplitude_scale) != rr.size:
            raise SignalError("r_amplitude_scale length must match rr_intervals_ms")

    @property
    def waves(self) -> tuple[WaveShape, ...]:
        return (self.p_wave, self.q_wave, self.r_wave, self.s_wave, self.t_wave)


def generate_synthetic_ecg(
    spec: SyntheticEcgSpec,
    seed: int,
    subject_id: str = "synthetic",
    gender: Gender = Gender.MALE,
    age: int = 30,
    pain_label: PainLabel = PainLabel.NP,
) -> tuple[EcgRecord, np.ndarray]:
    """Render a synthetic ECG and return it with its ground-truth R indices.

    Each beat is a sum of Gaussian bumps (P, Q, R, S, T) centered on the
    middle of its RR slot, plus white noise. The R centers are known by
    construction, which makes the generator a free oracle for the detector.
    Deterministic for a fixed seed.
    """
    fs = spec.sample_rate
    rr = np.asarray(spec.rr_intervals_ms, dtype=np.float64)
    beat_len = rr * fs / 1000.0
    starts = np.concatenate([[0.0], np.cumsum(beat_len)[:-1]])
    total = int(round(beat_len.sum()))
    x = np.zeros(total)
    r_scale = (
        np.ones(rr.size)
        if spec.r_amplitude_scale is None
        else np.asarray(spec.r_amplitude_scale, dtype=np.float64)
    )
    gt = np.empty(rr.size, dtype=np.int64)
    for k in range(rr.size):
        r_center = starts[k] + 0.5 * beat_len[k]
        gt[k] = int(round(r_center))
        for wave in spec.waves:
            amp = wave.amplitude * (r_scale[k] if wave is spec.r_wave else 1.0)
            center = r_center + wave.offset_frac * beat_len[k]
            sigma = wave.width_frac * beat_len[k]
            lo = max(0, int(center - 5 * sigma))
            hi = min(total, int(center + 5 * sigma) + 1)
            if lo >= hi:
                continue
            i = np.arange(lo, hi)
            x[lo:hi] += amp * np.exp(-0.5 * ((i - center) / sigma) ** 2)
    if spec.noise_std > 0:
        x = x + np.random.default_rng(seed).normal(0.0, spec.noise_std, total)
    record = EcgRecord(x, fs, subject_id, gender, age, pain_label)
    return record, gt


def bandpass_filter(
    samples: np.ndarray,
    sample_rate: float,
    low_hz: float = 5.0,
    high_hz: float = 15.0,
    order: int = 2,
) -> np.ndarray:
    """Causal band-pass: cascaded Butterworth low-pass then high-pass.

    Passes the QRS energy band and rejects baseline wander and mains hum.
    Zero initial state, so a constant input decays to zero after the
    transient.
    """
    if not 0 < low_hz < high_hz < sample_rate / 2:
        raise SignalError(
            f"need 0 < low_hz < high_hz < Nyquist, got ({low_hz}, {high_hz}) at {sample_rate} Hz"
        )
    x = np.asarray(samples, dtype=np.float64)
    b_lo, a_lo = sps.butter(order, high_hz, btype="low", fs=sample_rate)
    b_hi, a_hi = sps.butter(order, low_hz, btype="high", fs=sample_rate)
    return sps.lfilter(b_hi, a_hi, sps.lfilter(b_lo, a_lo, x))


def bandpass_group_delay(
    sample_rate: float, low_hz: float = 5.0, high_hz: float = 15.0, order: int = 2
) -> float:
    """Group delay of the band-pass cascade at mid-band, in samples."""
    mid = 0.5 * (low_hz + high_hz)
    b_lo, a_lo = sps.butter(order, high_hz, btype="low", fs=sample_rate)
    b_hi, a_hi = sps.butter(order, low_hz, btype="high", fs=sample_rate)
    _, d1 = sps.group_delay((b_lo, a_lo), w=[mid], fs=sample_rate)
    _, d2 = sps.group_delay((b_hi, a_hi), w=[mid], fs=sample_rate)
    return float(d1[0] + d2[0])


# causal five-point derivative; two-sample group delay
DERIVATIVE_KERNEL = np.array([1.0, 2.0, 0.0, -2.0, -1.0])
DERIVATIVE_DELAY_SAMPLES = 2


def derivative_filter(samples: np.ndarray, sample_rate: float) -> np.ndarray:
    """Five-point derivative scaled to amplitude-per-second units.

    y[n] = (fs/8) * (x[n] + 2 x[n-1] - 2 x[n-3] - x[n-4]); exact slope for a
    linear ramp, zero for a constant, approximately 2*pi*f gain for low-band
    sinusoids.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 5:
        raise SignalError(f"derivative_filter needs >= 5 samples, got {x.size}")
    b = DERIVATIVE_KERNEL * (sample_rate / 8.0)
    return sps.lfilter(b, [1.0], x)


def square_signal(samples: np.ndarray) -> np.ndarray:
    """Elementwise square; makes all slope energy positive."""
    x = np.asarray(samples, dtype=np.float64)
    return x * x


def moving_window_integrate(samples: np.ndarray, window_len_samples: int) -> np.ndarray:
    """Trailing-window mean (zero-padded before the first sample).

    Output length equals input length. An impulse of height 1 becomes a
    plateau of height 1/N lasting N samples.
    """
    if window_len_samples < 1:
        raise SignalError("window length must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    kernel = np.full(int(window_len_samples), 1.0 / int(window_len_samples))
    return sps.lfilter(kernel, [1.0], x)
