"""Demographic schemes, classification tasks, LOSO cross-validation, and
report generation.

A LOSO run holds one subject out per fold. All training-side statistics,
including feature normalization, are computed from the training subjects
only; every fold writes an audit entry (training subject set, normalization
statistics, a hash of the training design matrix) so purity can be verified
after the fact rather than assumed.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, WindowRecord
from .hrv_features import AugmentMode, normalize_features
from .models import (
    LossForm,
    MtlLossParams,
    MtNnConfig,
    MultiHeadNet,
    StNnConfig,
    build_mt_nn,
    build_st_nn,
    mt_backward,
)
from .nn_engine import AdamW, NumericalError, WeightEma, lr_at
from .signal_core import Gender, PainLabel

AGE_BINS = ((20, 35), (36, 50), (51, 65))


# ---------------------------------------------------------------------------
# schemes


@dataclass
class Scheme:
    """A named partition of the cohort into subject groups."""

    name: str
    groups: dict[str, list[str]]


SCHEME_NAMES = ("basic", "gender", "age", "gender_age")


def _age_bin_name(age: int) -> str:
    for lo, hi in AGE_BINS:
        if lo <= age <= hi:
            return f"{lo}-{hi}"
    raise DataError(f"age {age} outside every bin")


def make_scheme(dataset: Dataset, name: str) -> Scheme:
    """Partition the subjects by demographics.

    basic: one group; gender: males/females; age: the three closed bins
    20-35, 36-50, 51-65; gender_age: the six-way cross product.
    """
    if name not in SCHEME_NAMES:
        raise DataError(f"unknown scheme {name!r}; expected one of {SCHEME_NAMES}")
    demo = dataset.demographics()
    groups: dict[str, list[str]] = {}
    for subject in sorted(demo):
        gender, age = demo[subject]
        if name == "basic":
            key = "All"
        elif name == "gender":
            key = "Males" if gender is Gender.MALE else "Females"
        elif name == "age":
            key = _age_bin_name(age)
        else:
            sex = "Males" if gender is Gender.MALE else "Females"
            key = f"{sex} {_age_bin_name(age)}"
        groups.setdefault(key, []).append(subject)
    return Scheme(name, groups)


# ---------------------------------------------------------------------------
# tasks and methods


class TaskKind(Enum):
    NP_VS_P1 = "np_vs_p1"
    NP_VS_P2 = "np_vs_p2"
    NP_VS_P3 = "np_vs_p3"
    NP_VS_P4 = "np_vs_p4"
    MULTICLASS = "multiclass"


_TASK_DISPLAY = {
    TaskKind.NP_VS_P1: "NP vs P1",
    TaskKind.NP_VS_P2: "NP vs P2",
    TaskKind.NP_VS_P3: "NP vs P3",
    TaskKind.NP_VS_P4: "NP vs P4",
    TaskKind.MULTICLASS: "MC",
}


@dataclass(frozen=True)
class TaskSpec:
    kind: TaskKind

    @property
    def n_classes(self) -> int:
        return 5 if self.kind is TaskKind.MULTICLASS else 2

    @property
    def display(self) -> str:
        return _TASK_DISPLAY[self.kind]

    def keep_labels(self) -> tuple[PainLabel, ...]:
        if self.kind is TaskKind.MULTICLASS:
            return tuple(PainLabel)
        positive = PainLabel(self.kind.value.split("_vs_")[1].upper())
        return (PainLabel.NP, positive)

    def class_index(self, label: PainLabel) -> int:
        kept = self.keep_labels()
        if label not in kept:
            raise DataError(f"label {label.value} not part of task {self.display}")
        return kept.index(label)


ALL_TASKS = tuple(TaskSpec(k) for k in TaskKind)


@dataclass(frozen=True)
class Method:
    """One row label of the result tables."""

    label: str
    kind: str  # "st" or "mt"
    augment: AugmentMode = AugmentMode.NONE
    mt_tasks: tuple[str, ...] = ("pain",)

    _KNOWN = {
        "ST-NN": ("st", AugmentMode.NONE, ("pain",)),
        "ST-NN+F(G)": ("st", AugmentMode.GENDER, ("pain",)),
        "ST-NN+F(A)": ("st", AugmentMode.AGE, ("pain",)),
        "ST-NN+F(GA)": ("st", AugmentMode.GENDER_AGE, ("pain",)),
        "MT-NN+T(G)": ("mt", AugmentMode.NONE, ("pain", "gender")),
        "MT-NN+T(A)": ("mt", AugmentMode.NONE, ("pain", "age")),
        "MT-NN+T(GA)": ("mt", AugmentMode.NONE, ("pain", "age", "gender")),
    }

    @classmethod
    def parse(cls, label: str) -> "Method":
        try:
            kind, augment, tasks = cls._KNOWN[label]
        except KeyError:
            raise DataError(f"unknown method {label!r}; expected one of {sorted(cls._KNOWN)}")
        return cls(label, kind, augment, tasks)

    @property
    def input_dim(self) -> int:
        extra = {"none": 0, "G": 1, "A": 1, "GA": 2}[self.augment.value]
        return 6 + extra


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    base_lr: float = 1e-3
    weight_decay: float = 0.1
    warmup_epochs: int = 50
    label_smoothing: float = 0.1
    ema_decay: float = 0.999
    batch_size: int = 128
    eval_with_ema: bool = True
    encoder_widths: tuple[int, ...] = (256, 512, 1024, 1024)
    classifier_hidden: int = 1024
    age_head_classes: int = 36


def fold_seed(seed: int, subject_id: str) -> int:
    """Expand the global seed into one deterministic seed per fold."""
    return (seed ^ zlib.crc32(subject_id.encode())) & 0x7FFFFFFF


def train_network(
    net: MultiHeadNet,
    x: np.ndarray,
    targets: dict[str, np.ndarray],
    loss_params: MtlLossParams,
    form: LossForm,
    cfg: TrainConfig,
    seed: int,
) -> WeightEma:
    """Minibatch AdamW training with warmup+cosine schedule and weight EMA.

    Mutates the network parameters in place and returns the EMA state.
    The uncertainty scalars join the optimized parameters only when at
    least two tasks are active; with a single task they stay frozen so the
    run is identical to plain single-task training.
    """
    net_params = net.params()
    opt_params = dict(net_params)
    if loss_params.uncertainty_trainable():
        opt_params.update(loss_params.w_params())
    optimizer = AdamW(
        lr=cfg.base_lr,
        weight_decay=cfg.weight_decay,
        decay_filter=lambda name: name.endswith(".W"),
    )
    ema = WeightEma(net_params, cfg.ema_decay)
    rng = np.random.default_rng([seed, zlib.crc32(b"train")])
    n = x.shape[0]
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg.base_lr, cfg.warmup_epochs, cfg.epochs)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_targets = {t: v[idx] for t, v in targets.items()}
            loss, _, grads = mt_backward(
                net, x[idx], batch_targets, loss_params, form, cfg.label_smoothing
            )
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            optimizer.step(opt_params, grads, lr=lr)
            ema.update(net_params)
    for p in net_params.values():
        if not np.all(np.isfinite(p)):
            raise NumericalError("non-finite parameter after training")
    return ema


def evaluate_pain(
    net: MultiHeadNet, ema: WeightEma | None, x: np.ndarray, y: np.ndarray, use_ema: bool = True
) -> tuple[int, int]:
    """Pain-head correct/total on held-out windows."""
    if use_ema and ema is not None:
        with ema.swapped(net.params()):
            logits = net.pain_logits(x)
    else:
        logits = net.pain_logits(x)
    pred = np.argmax(logits, axis=1)
    return int(np.sum(pred == np.asarray(y))), int(len(y))


# ---------------------------------------------------------------------------
# fold assembly


def build_design_matrix(rows: list[WindowRecord], augment: AugmentMode) -> np.ndarray:
    """Stack base features plus any demographic augmentation columns.

    Column order: f1..f6, then gender (0/1), then age in years.
    """
    cols = []
    for r in rows:
        if r.features is None:
            raise DataError(f"window {r.subject_id}/{r.window_id} has no features")
        vec = list(r.features)
        if augment in (AugmentMode.GENDER, AugmentMode.GENDER_AGE):
            vec.append(0.0 if r.gender is Gender.MALE else 1.0)
        if augment in (AugmentMode.AGE, AugmentMode.GENDER_AGE):
            vec.append(float(r.age))
        cols.append(vec)
    return np.asarray(cols, dtype=np.float64)


def _matrix_sha256(x: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()


@dataclass
class FoldResult:
    subject: str
    n_test: int
    n_correct: int
    accuracy: float
    seed: int
    skipped: bool = False
    reason: str = ""


@dataclass
class FoldAudit:
    """Evidence that the held-out subject stayed out of the training side."""

    test_subject: str
    train_subjects: list[str]
    n_train_rows: int
    norm_mean: list[float]
    norm_std: list[float]
    train_matrix_sha256: str


@dataclass
class FoldReport:
    group: str
    task: str
    method: str
    seed: int
    config_hash: str
    folds: list[FoldResult] = field(default_factory=list)
    audits: list[FoldAudit] = field(default_factory=list)

    @property
    def pooled_accuracy(self) -> float:
        """Accuracy pooled over all held-out windows, in percent."""
        scored = [f for f in self.folds if not f.skipped]
        total = sum(f.n_test for f in scored)
        if total == 0:
            return float("nan")
        return 100.0 * sum(f.n_correct for f in scored) / total

    @property
    def skipped_folds(self) -> int:
        return sum(1 for f in self.folds if f.skipped)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "task": self.task,
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "pooled_accuracy": self.pooled_accuracy,
            "folds": [asdict(f) for f in self.folds],
            "audits": [asdict(a) for a in self.audits],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "FoldReport":
        report = cls(d["group"], d["task"], d["method"], d["seed"], d["config_hash"])
        report.folds = [FoldResult(**f) for f in d["folds"]]
        report.audits = [FoldAudit(**a) for a in d["audits"]]
        return report


@dataclass(frozen=True)
class _FoldJob:
    test_subject: str
    train_rows: tuple
    test_rows: tuple
    task: TaskSpec
    method: Method
    train_cfg: TrainConfig
    coefficients: tuple[float, float, float]
    form: LossForm
    seed: int


def _age_class_map(rows) -> dict[int, int]:
    return {age: i for i, age in enumerate(sorted({r.age for r in rows}))}


def _loss_params_for(method: Method, coefficients) -> MtlLossParams:
    c1, c2, c3 = coefficients
    if method.kind == "st":
        return MtlLossParams(c={"pain": c1, "age": 0.0, "gender": 0.0})
    return MtlLossParams(
        c={
            "pain": c1,
            "age": c2 if "age" in method.mt_tasks else 0.0,
            "gender": c3 if "gender" in method.mt_tasks else 0.0,
        }
    )


def _run_fold(job: _FoldJob) -> tuple[FoldResult, FoldAudit | None]:
    task, method, cfg = job.task, job.method, job.train_cfg
    train_rows, test_rows = list(job.train_rows), list(job.test_rows)
    train_labels = {r.pain_label for r in train_rows}
    if len(train_labels) < 2:
        return (
            FoldResult(job.test_subject, len(test_rows), 0, float("nan"), job.seed,
                       skipped=True, reason="degenerate fold: single training class"),
            None,
        )
    x_train = build_design_matrix(train_rows, method.augment)
    x_test = build_design_matrix(test_rows, method.augment)
    x_train, x_test, mean, std = normalize_features(x_train, x_test)
    audit = FoldAudit(
        test_subject=job.test_subject,
        train_subjects=sorted({r.subject_id for r in train_rows}),
        n_train_rows=len(train_rows),
        norm_mean=[float(v) for v in mean],
        norm_std=[float(v) for v in std],
        train_matrix_sha256=_matrix_sha256(build_design_matrix(train_rows, method.augment)),
    )

    y_train = np.array([task.class_index(r.pain_label) for r in train_rows])
    y_test = np.array([task.class_index(r.pain_label) for r in test_rows])
    targets = {"pain": y_train}
    if method.kind == "st":
        net = build_st_nn(
            StNnConfig(method.input_dim, task.n_classes, cfg.encoder_widths, cfg.classifier_hidden),
            seed=job.seed,
        )
    else:
        net = build_mt_nn(
            MtNnConfig(
                method.input_dim,
                task.n_classes,
                tasks=method.mt_tasks,
                age_classes=cfg.age_head_classes,
                encoder_widths=cfg.encoder_widths,
                classifier_hidden=cfg.classifier_hidden,
            ),
            seed=job.seed,
        )
        if "age" in method.mt_tasks:
            age_map = _age_class_map(train_rows)
            if len(age_map) > cfg.age_head_classes:
                raise DataError(
                    f"{len(age_map)} distinct training ages exceed the "
                    f"{cfg.age_head_classes}-wide age head"
                )
            targets["age"] = np.array([age_map[r.age] for r in train_rows])
        if "gender" in method.mt_tasks:
            targets["gender"] = np.array(
                [0 if r.gender is Gender.MALE else 1 for r in train_rows]
            )

    loss_params = _loss_params_for(method, job.coefficients)
    ema = train_network(net, x_train, targets, loss_params, job.form, cfg, job.seed)
    correct, total = evaluate_pain(net, ema, x_test, y_test, cfg.eval_with_ema)
    return (
        FoldResult(job.test_subject, total, correct, 100.0 * correct / total, job.seed),
        audit,
    )


def run_loso(
    dataset: Dataset,
    task: TaskSpec,
    method: Method,
    train_cfg: TrainConfig,
    seed: int = 0,
    subjects: list[str] | None = None,
    group_name: str = "All",
    coefficients: tuple[float, float, float] = (1.0, 0.2, 0.2),
    form: LossForm = LossForm.KENDALL_CORRECTED,
    config_hash: str = "",
    workers: int = 1,
) -> FoldReport:
    """Leave-one-subject-out evaluation of one (group, task, method) cell.

    One fold per subject; the held-out subject contributes nothing to
    normalization statistics or gradients. Degenerate folds are skipped and
    flagged rather than aborting the run.
    """
    subjects = sorted(subjects) if subjects is not None else dataset.subjects()
    if len(subjects) < 2:
        raise DataError(f"LOSO needs at least 2 subjects, got {len(subjects)}")
    keep = set(task.keep_labels())
    rows = [r for r in dataset.records if r.subject_id in set(subjects) and r.pain_label in keep]
    if not rows:
        raise DataError(f"no windows for task {task.display} in group {group_name}")

    jobs = []
    for test_subject in subjects:
        jobs.append(
            _FoldJob(
                test_subject=test_subject,
                train_rows=tuple(r for r in rows if r.subject_id != test_subject),
                test_rows=tuple(r for r in rows if r.subject_id == test_subject),
                task=task,
                method=method,
                train_cfg=train_cfg,
                coefficients=coefficients,
                form=form,
                seed=fold_seed(seed, test_subject),
            )
        )

    report = FoldReport(group_name, task.kind.value, method.label, seed, config_hash)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_fold, jobs))
    else:
        outcomes = [_run_fold(job) for job in jobs]
    for fold, audit in outcomes:
        report.folds.append(fold)
        if audit is not None:
            report.audits.append(audit)
    return report


def verify_loso_purity(report: FoldReport, dataset: Dataset, task: TaskSpec, method: Method) -> list[str]:
    """Check the audit trail of a finished report against the dataset.

    Recomputes, per fold, the training design matrix from the recorded
    training subjects and compares hash and normalization statistics with
    what the fold actually used. Returns a list of violations (empty means
    the held-out subject never leaked into the training side).
    """
    violations = []
    keep = set(task.keep_labels())
    for audit in report.audits:
        if audit.test_subject in audit.train_subjects:
            violations.append(f"{audit.test_subject}: held-out subject in training set")
            continue
        train_rows = [
            r
            for r in dataset.records
            if r.subject_id in set(audit.train_subjects) and r.pain_label in keep
        ]
        x = build_design_matrix(train_rows, method.augment)
        if _matrix_sha256(x) != audit.train_matrix_sha256:
            violations.append(f"{audit.test_subject}: training matrix hash mismatch")
            continue
        _, _, mean, std = normalize_features(x, x[:1])
        if [float(v) for v in mean] != audit.norm_mean or [float(v) for v in std] != audit.norm_std:
            violations.append(f"{audit.test_subject}: normalization statistics mismatch")
    return violations


# ---------------------------------------------------------------------------
# matrix runs and comparisons


@dataclass(frozen=True)
class ResultCell:
    group: str
    method: str
    task: str
    accuracy: float


def report_cell(report: FoldReport) -> ResultCell:
    return ResultCell(report.group, report.method, report.task, report.pooled_accuracy)


@dataclass
class MethodComparison:
    methods: list[str]
    tasks: list[str]
    mean_accuracy: dict[str, float]
    per_task_deltas: dict[tuple[str, str], dict[str, float]]
    mean_deltas: dict[tuple[str, str], float]


def compare_methods(cells) -> MethodComparison:
    """Mean accuracy over tasks per method, plus all pairwise deltas.

    Every method must cover the same task set.
    """
    by_method: dict[str, dict[str, float]] = {}
    for cell in cells:
        by_method.setdefault(cell.method, {})[cell.task] = cell.accuracy
    if not by_method:
        raise DataError("no cells to compare")
    methods = list(by_method)
    task_sets = {m: tuple(sorted(by_method[m])) for m in methods}
    reference = task_sets[methods[0]]
    for m, ts in task_sets.items():
        if ts != reference:
            raise DataError(f"method {m} covers tasks {ts}, expected {reference}")
    tasks = [k.value for k in TaskKind if k.value in reference]
    mean_acc = {m: float(np.mean([by_method[m][t] for t in tasks])) for m in methods}
    per_task = {}
    mean_deltas = {}
    for a in methods:
        for b in methods:
            if a == b:
                continue
            per_task[(a, b)] = {t: by_method[a][t] - by_method[b][t] for t in tasks}
            mean_deltas[(a, b)] = mean_acc[a] - mean_acc[b]
    return MethodComparison(methods, tasks, mean_acc, per_task, mean_deltas)


def render_matrix_text(cells: list[ResultCell], tasks: list[TaskSpec]) -> str:
    """Paper-style aligned table: one row per (group, method)."""
    headers = ["Group", "Method"] + [t.display for t in tasks]
    rows = []
    seen = []
    for cell in cells:
        key = (cell.group, cell.method)
        if key not in seen:
            seen.append(key)
    table = {(c.group, c.method, c.task): c.accuracy for c in cells}
    for group, method in seen:
        row = [group, method]
        for t in tasks:
            acc = table.get((group, method, t.kind.value))
            row.append("-" if acc is None or np.isnan(acc) else f"{acc:.2f}")
        rows.append(row)
    widths = [max(len(str(r[i])) for r in [headers] + rows) for i in range(len(headers))]
    lines = []
    for r in [headers] + rows:
        lines.append("  ".join(str(v).ljust(w) if i < 2 else str(v).rjust(w)
                               for i, (v, w) in enumerate(zip(r, widths))))
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def render_matrix_csv(cells: list[ResultCell], reports: dict[tuple, FoldReport]) -> str:
    lines = ["group,method,task,accuracy,n_folds,skipped_folds,seed,config_hash"]
    for c in cells:
        rep = reports.get((c.group, c.method, c.task))
        acc = "" if np.isnan(c.accuracy) else f"{c.accuracy:.6f}"
        if rep is None:
            lines.append(f"{c.group},{c.method},{c.task},{acc},,,,")
        else:
            lines.append(
                f"{c.group},{c.method},{c.task},{acc},{len(rep.folds)},"
                f"{rep.skipped_folds},{rep.seed},{rep.config_hash}"
            )
    return "\n".join(lines) + "\n"


def _safe_name(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name)


def run_matrix(dataset: Dataset, config, out_dir) -> dict:
    """Execute the full schemes x tasks x methods cross product.

    Writes ``matrix.csv``, ``matrix.txt``, and per-cell fold reports under
    ``folds/<group>/<task>/<method>.json``. Failures of individual cells
    are recorded and the matrix continues.
    """
    from .config import ExperimentConfig  # local import to avoid a cycle

    if not isinstance(config, ExperimentConfig):
        raise DataError("run_matrix needs an ExperimentConfig")
    if not config.methods:
        raise DataError("empty method list")
    if not config.tasks:
        raise DataError("empty task list")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [TaskSpec(TaskKind(t)) for t in config.tasks]
    methods = [Method.parse(m) for m in config.methods]
    cells: list[ResultCell] = []
    reports: dict[tuple, FoldReport] = {}
    failures: list[dict] = []
    for scheme_name in config.scheme_list():
        scheme = make_scheme(dataset, scheme_name)
        for group_name, subjects in scheme.groups.items():
            for task in tasks:
                for method in methods:
                    try:
                        report = run_loso(
                            dataset,
                            task,
                            method,
                            config.nn,
                            seed=config.seed,
                            subjects=subjects,
                            group_name=group_name,
                            coefficients=config.coefficients.as_tuple(),
                            form=config.loss_form_enum(),
                            config_hash=config.config_hash(),
                            workers=config.workers,
                        )
                    except Exception as exc:  # record and continue
                        failures.append({
                            "group": group_name,
                            "task": task.kind.value,
                            "method": method.label,
                            "error": f"{type(exc).__name__}: {exc}",
                        })
                        cells.append(ResultCell(group_name, method.label, task.kind.value, float("nan")))
                        continue
                    cell = report_cell(report)
                    cells.append(cell)
                    reports[(cell.group, cell.method, cell.task)] = report
                    fold_path = (
                        out_dir / "folds" / _safe_name(group_name)
                        / _safe_name(task.kind.value) / f"{_safe_name(method.label)}.json"
                    )
                    fold_path.parent.mkdir(parents=True, exist_ok=True)
                    fold_path.write_text(report.to_json())
    (out_dir / "matrix.txt").write_text(render_matrix_text(cells, tasks))
    (out_dir / "matrix.csv").write_text(render_matrix_csv(cells, reports))
    if failures:
        (out_dir / "failures.json").write_text(json.dumps(failures, sort_keys=True, indent=2))
    return {"cells": cells, "reports": reports, "failures": failures}
