"""Dataset records, CSV ingestion with row-level validation, and the
synthetic cohort generator.

Two CSV layouts are supported. A feature cache carries the six HRV features
per stimulus window:

    subject_id,gender,age,pain_label,window_id,f1,f2,f3,f4,f5,f6

and a raw-ECG manifest points at one samples file per window:

    subject_id,gender,age,pain_label,window_id,sample_rate,samples_path

Gender is M/F, pain_label one of NP,P1,P2,P3,P4, age 20..65. Samples files
are single-column text (one amplitude per line).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .hrv_features import IbiSeries, compute_features
from .signal_core import (
    AGE_MAX,
    AGE_MIN,
    EcgRecord,
    Gender,
    PainLabel,
    SyntheticEcgSpec,
    generate_synthetic_ecg,
)

FEATURE_HEADER = ["subject_id", "gender", "age", "pain_label", "window_id",
                  "f1", "f2", "f3", "f4", "f5", "f6"]
RAW_HEADER = ["subject_id", "gender", "age", "pain_label", "window_id",
              "sample_rate", "samples_path"]


class DataError(ValueError):
    """Malformed dataset input; carries the offending row number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


class Provenance(Enum):
    BIOVID_CSV = "biovid_csv"
    SYNTHETIC_COHORT = "synthetic_cohort"


@dataclass
class WindowRecord:
    """One stimulus window: metadata plus either features or a raw pointer."""

    subject_id: str
    gender: Gender
    age: int
    pain_label: PainLabel
    window_id: str
    features: np.ndarray | None = None
    sample_rate: float | None = None
    samples_path: str | None = None

    def __post_init__(self):
        if self.features is not None:
            self.features = np.asarray(self.features, dtype=np.float64)
            if self.features.shape != (6,):
                raise DataError(f"expected 6 base features, got shape {self.features.shape}")


@dataclass
class Dataset:
    records: list[WindowRecord]
    provenance: Provenance

    def subjects(self) -> list[str]:
        return sorted({r.subject_id for r in self.records})

    @property
    def has_features(self) -> bool:
        return bool(self.records) and self.records[0].features is not None

    def rows_for(self, subject_ids) -> list[WindowRecord]:
        wanted = set(subject_ids)
        return [r for r in self.records if r.subject_id in wanted]

    def demographics(self) -> dict[str, tuple[Gender, int]]:
        out: dict[str, tuple[Gender, int]] = {}
        for r in self.records:
            known = out.setdefault(r.subject_id, (r.gender, r.age))
            if known != (r.gender, r.age):
                raise DataError(f"subject {r.subject_id} has inconsistent demographics")
        return out


def _parse_common(fields: dict, row_no: int) -> tuple[str, Gender, int, PainLabel, str]:
    subject = fields["subject_id"].strip()
    if not subject:
        raise DataError("empty subject_id", row_no)
    try:
        gender = Gender(fields["gender"].strip())
    except ValueError:
        raise DataError(f"unknown gender {fields['gender']!r} (expected M or F)", row_no)
    try:
        age = int(fields["age"])
    except ValueError:
        raise DataError(f"non-integer age {fields['age']!r}", row_no)
    if not AGE_MIN <= age <= AGE_MAX:
        raise DataError(f"age {age} outside [{AGE_MIN}, {AGE_MAX}]", row_no)
    try:
        label = PainLabel(fields["pain_label"].strip())
    except ValueError:
        raise DataError(f"unknown pain label {fields['pain_label']!r}", row_no)
    window = fields["window_id"].strip()
    if not window:
        raise DataError("empty window_id", row_no)
    return subject, gender, age, label, window


def load_dataset(path, provenance: Provenance = Provenance.BIOVID_CSV) -> Dataset:
    """Read either CSV layout; the header decides which.

    Every row is validated; violations raise :class:`DataError` citing the
    row number. Duplicate (subject_id, window_id) keys are rejected.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("empty dataset file")
        header = [h.strip() for h in header]
        if header == FEATURE_HEADER:
            raw_mode = False
        elif header == RAW_HEADER:
            raw_mode = True
        else:
            raise DataError(f"unrecognized header {header}", row=1)
        records = []
        seen: set[tuple[str, str]] = set()
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} columns, got {len(row)}", row_no)
            fields = dict(zip(header, row))
            subject, gender, age, label, window = _parse_common(fields, row_no)
            key = (subject, window)
            if key in seen:
                raise DataError(f"duplicate (subject, window) key {key}", row_no)
            seen.add(key)
            if raw_mode:
                try:
                    rate = float(fields["sample_rate"])
                except ValueError:
                    raise DataError(f"non-numeric sample_rate {fields['sample_rate']!r}", row_no)
                if rate <= 0:
                    raise DataError(f"sample_rate must be positive, got {rate}", row_no)
                records.append(WindowRecord(subject, gender, age, label, window,
                                            sample_rate=rate,
                                            samples_path=fields["samples_path"].strip()))
            else:
                try:
                    feats = np.array([float(fields[f"f{i}"]) for i in range(1, 7)])
                except ValueError:
                    raise DataError("non-numeric feature value", row_no)
                if not np.all(np.isfinite(feats)):
                    raise DataError("non-finite feature value", row_no)
                records.append(WindowRecord(subject, gender, age, label, window, features=feats))
    if not records:
        raise DataError("dataset has no data rows")
    return Dataset(records, provenance)


def save_dataset(dataset: Dataset, path) -> None:
    """Write a dataset back out in the layout matching its records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw_mode = not dataset.has_features
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_HEADER if raw_mode else FEATURE_HEADER)
        for r in dataset.records:
            base = [r.subject_id, r.gender.value, r.age, r.pain_label.value, r.window_id]
            if raw_mode:
                writer.writerow(base + [r.sample_rate, r.samples_path])
            else:
                writer.writerow(base + [repr(float(v)) for v in r.features])


def read_samples_file(path) -> np.ndarray:
    """Single-column text file of amplitudes, one per line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"samples file not found: {path}")
    try:
        samples = np.loadtxt(path, dtype=np.float64, ndmin=1)
    except ValueError as exc:
        raise DataError(f"unreadable samples file {path}: {exc}")
    if samples.ndim != 1 or samples.size == 0:
        raise DataError(f"samples file {path} is not a non-empty single column")
    return samples


def write_samples_file(path, samples: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(samples, dtype=np.float64), fmt="%.17g")


# ---------------------------------------------------------------------------
# synthetic cohort

AGE_BINS = ((20, 35), (36, 50), (51, 65))

# injected effect: pain shortens the mean IBI and damps short-term
# variability, monotonically in the label, by more than the between-subject
# spread, so leave-one-subject-out learning is possible at desk scale
_BASE_IBI_RANGE = (820.0, 900.0)
_IBI_DROP_PER_LEVEL = 30.0
_BASE_RMSSD_RANGE = (30.0, 42.0)
_RMSSD_SHRINK_PER_LEVEL = 0.85


def _subject_ages(n_subjects: int, rng: np.random.Generator) -> list[int]:
    # cycle through the three bins so every bin is populated
    ages = []
    for i in range(n_subjects):
        lo, hi = AGE_BINS[i % len(AGE_BINS)]
        ages.append(int(rng.integers(lo, hi + 1)))
    return ages


def generate_synthetic_cohort(
    n_subjects: int,
    seed: int,
    windows_per_class: int = 20,
    beats_per_window: int = 13,
    render: str = "features",
    out_dir=None,
    noise_std: float = 0.02,
    sample_rate: float = 512.0,
) -> Dataset:
    """Build a balanced synthetic cohort with a known pain effect.

    Each subject gets ``windows_per_class`` windows per pain level. With
    ``render="features"`` the IBI series are turned into feature vectors
    directly; with ``render="raw"`` each window is rendered to a synthetic
    ECG samples file under ``out_dir`` and the dataset points at the files.
    Deterministic for a fixed seed.
    """
    if n_subjects < 2:
        raise DataError(f"need at least 2 subjects, got {n_subjects}")
    if render not in ("features", "raw"):
        raise DataError(f"unknown render mode {render!r}")
    if render == "raw" and out_dir is None:
        raise DataError("raw rendering needs an output directory for samples files")

    rng = np.random.default_rng(seed)
    ages = _subject_ages(n_subjects, rng)
    records: list[WindowRecord] = []
    for i in range(n_subjects):
        subject = f"S{i + 1:03d}"
        gender = Gender.MALE if i % 2 == 0 else Gender.FEMALE
        age = ages[i]
        base_ibi = rng.uniform(*_BASE_IBI_RANGE)
        base_rmssd = rng.uniform(*_BASE_RMSSD_RANGE)
        for label in PainLabel:
            level = label.level
            mean_ibi = base_ibi - _IBI_DROP_PER_LEVEL * level
            rmssd = base_rmssd * _RMSSD_SHRINK_PER_LEVEL**level
            for j in range(windows_per_class):
                window_id = f"{label.value}-{j:02d}"
                window_mean = mean_ibi + rng.normal(0.0, 4.0)
                trend = rng.normal(0.0, 1.5)
                beats = np.arange(beats_per_window - 1, dtype=np.float64)
                ibis = (
                    window_mean
                    + trend * (beats - beats.mean())
                    + rng.normal(0.0, rmssd / np.sqrt(2.0), beats.size)
                )
                ibis = np.maximum(ibis, 300.0)
                if render == "features":
                    fv = compute_features(IbiSeries(ibis))
                    records.append(
                        WindowRecord(subject, gender, age, label, window_id,
                                     features=fv.as_array())
                    )
                else:
                    spec = SyntheticEcgSpec(
                        rr_intervals_ms=ibis, sample_rate=sample_rate, noise_std=noise_std
                    )
                    ecg, _ = generate_synthetic_ecg(
                        spec,
                        seed=int(rng.integers(0, 2**31)),
                        subject_id=subject,
                        gender=gender,
                        age=age,
                        pain_label=label,
                    )
                    rel = Path("signals") / f"{subject}_{window_id}.txt"
                    write_samples_file(Path(out_dir) / rel, ecg.samples)
                    records.append(
                        WindowRecord(subject, gender, age, label, window_id,
                                     sample_rate=sample_rate, samples_path=str(rel))
                    )
    return Dataset(records, Provenance.SYNTHETIC_COHORT)


def extract_features_from_raw(
    dataset: Dataset,
    detector_config=None,
    base_dir=None,
    sdnn_ddof: int = 0,
    slope_axis: str = "index",
) -> tuple[Dataset, list[dict]]:
    """Run detection + feature extraction over a raw-ECG dataset.

    Returns the feature dataset and a list of rejects, one dict per window
    that could not be processed (with its reason). Window order is
    preserved, so reruns are byte-identical.
    """
    from .qrs_detect import DetectorConfig, detect_qrs
    from .hrv_features import InsufficientBeatsError, compute_ibis
    from .signal_core import SignalError

    if dataset.has_features:
        raise DataError("dataset already carries features; expected raw-ECG mode")
    cfg = detector_config or DetectorConfig()
    base = Path(base_dir) if base_dir is not None else Path(".")
    out_records = []
    rejects = []
    for r in dataset.records:
        try:
            samples = read_samples_file(base / r.samples_path)
            ecg = EcgRecord(samples, r.sample_rate, r.subject_id, r.gender, r.age, r.pain_label)
            result = detect_qrs(ecg, cfg)
            ibis = compute_ibis(result.r_indices, r.sample_rate)
            fv = compute_features(ibis, sdnn_ddof=sdnn_ddof, slope_axis=slope_axis)
        except (InsufficientBeatsError, SignalError, DataError) as exc:
            rejects.append({
                "subject_id": r.subject_id,
                "window_id": r.window_id,
                "reason": type(exc).__name__,
                "detail": str(exc),
            })
            continue
        out_records.append(
            WindowRecord(r.subject_id, r.gender, r.age, r.pain_label, r.window_id,
                         features=fv.as_array())
        )
    return Dataset(out_records, dataset.provenance), rejects
