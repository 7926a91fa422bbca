"""Command-line front door.

Subcommands: extract-features, synth-cohort, train, run-matrix, report,
gradcheck, detect. Every run is deterministic given (config, seed); commands
that produce an output directory echo the fully resolved configuration into
it. Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, apply_overrides, load_config
from .data import (
    DataError,
    Provenance,
    extract_features_from_raw,
    generate_synthetic_cohort,
    load_dataset,
    read_samples_file,
    save_dataset,
)
from .experiments import (
    Method,
    TaskKind,
    TaskSpec,
    _loss_params_for,
    build_design_matrix,
    evaluate_pain,
    render_matrix_csv,
    render_matrix_text,
    report_cell,
    run_matrix,
    train_network,
)
from .experiments import FoldReport
from .hrv_features import compute_ibis, normalize_features
from .models import StNnConfig, MtNnConfig, build_mt_nn, build_st_nn, gradcheck_suite
from .nn_engine import NumericalError, save_checkpoint
from .qrs_detect import DetectorConfig, detect_qrs
from .signal_core import EcgRecord, Gender, PainLabel, SignalError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

GRADCHECK_TOLERANCE = 1e-4


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "workers", None) is not None:
        overrides.append(f"workers={args.workers}")
    return apply_overrides(cfg, overrides)


def _echo_config(cfg: ExperimentConfig, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n")


def _detector_from(cfg: ExperimentConfig) -> DetectorConfig:
    return cfg.detector


def cmd_synth_cohort(args) -> int:
    cfg = _resolve_config(args)
    out_dir = Path(args.out)
    dataset = generate_synthetic_cohort(
        args.subjects,
        seed=cfg.seed,
        windows_per_class=args.windows_per_class,
        render=args.render,
        out_dir=out_dir,
    )
    _echo_config(cfg, out_dir)
    save_dataset(dataset, out_dir / "dataset.csv")
    print(f"wrote {len(dataset.records)} windows for {args.subjects} subjects "
          f"to {out_dir / 'dataset.csv'} ({args.render} mode)")
    return EXIT_OK


def cmd_extract_features(args) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.input, Provenance.BIOVID_CSV)
    base_dir = Path(args.base_dir) if args.base_dir else Path(args.input).parent
    features, rejects = extract_features_from_raw(
        dataset,
        detector_config=_detector_from(cfg),
        base_dir=base_dir,
        sdnn_ddof=cfg.features.sdnn_ddof,
        slope_axis=cfg.features.slope_axis,
    )
    out_path = Path(args.output)
    rejects_path = out_path.with_suffix(out_path.suffix + ".rejects.csv")
    with open(rejects_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "window_id", "reason", "detail"])
        for r in rejects:
            writer.writerow([r["subject_id"], r["window_id"], r["reason"], r["detail"]])
    if not features.records:
        print("error: every window was rejected; see " + str(rejects_path), file=sys.stderr)
        return EXIT_DATA
    save_dataset(features, out_path)
    print(f"wrote {len(features.records)} feature rows to {out_path}; "
          f"{len(rejects)} rejects in {rejects_path}")
    return EXIT_OK


def cmd_detect(args) -> int:
    samples = read_samples_file(args.input)
    record = EcgRecord(
        samples, args.sample_rate, subject_id="cli", gender=Gender.MALE,
        age=30, pain_label=PainLabel.NP,
    )
    cfg = _resolve_config(args)
    result, stages = detect_qrs(record, _detector_from(cfg), return_stages=True)
    print(f"r_indices: {' '.join(str(i) for i in result.r_indices)}")
    if len(result.r_indices) >= 3:
        ibis = compute_ibis(result.r_indices, args.sample_rate)
        print("ibis_ms: " + " ".join(f"{v:.2f}" for v in ibis.ibis_ms))
        print(f"heart_rate_bpm: {60000.0 / float(np.mean(ibis.ibis_ms)):.2f}")
    else:
        print("ibis_ms: (fewer than 3 beats)")
    print(f"searchback_count: {result.searchback_count}")
    print(f"rejected_twave_count: {result.rejected_twave_count}")
    if args.dump_stages:
        path = Path(args.dump_stages)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = "raw,bandpassed,derivative,squared,integrated"
        table = np.column_stack([stages.raw, stages.bandpassed, stages.derivative,
                                 stages.squared, stages.integrated])
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
        print(f"stages written to {path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _resolve_config(args)
    results = gradcheck_suite(seed=cfg.seed, n_samples=args.samples, corrupt=args.corrupt)
    worst = 0.0
    for r in results:
        status = "ok" if r["max_rel_error"] <= GRADCHECK_TOLERANCE else "FAIL"
        print(f"{r['graph']:28s} max_rel_error {r['max_rel_error']:.3e} "
              f"({r['n_checked']} params)  {status}")
        worst = max(worst, r["max_rel_error"])
    print(f"overall max relative error: {worst:.3e}")
    if worst > GRADCHECK_TOLERANCE:
        print("gradient check FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradient check passed")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data)
    if not dataset.has_features:
        raise DataError("train expects a feature-cache dataset; run extract-features first")
    task = TaskSpec(TaskKind(args.task))
    method = Method.parse(args.method)
    subjects = dataset.subjects()
    holdout = args.holdout
    if holdout is not None and holdout not in subjects:
        raise DataError(f"holdout subject {holdout!r} not in dataset")
    keep = set(task.keep_labels())
    rows = [r for r in dataset.records if r.pain_label in keep]
    train_rows = [r for r in rows if r.subject_id != holdout]
    x_train = build_design_matrix(train_rows, method.augment)
    x_train_n, _, mean, std = normalize_features(x_train, x_train[:1])
    y_train = np.array([task.class_index(r.pain_label) for r in train_rows])
    targets = {"pain": y_train}
    if method.kind == "st":
        net = build_st_nn(
            StNnConfig(method.input_dim, task.n_classes, cfg.nn.encoder_widths,
                       cfg.nn.classifier_hidden),
            seed=cfg.seed,
        )
    else:
        net = build_mt_nn(
            MtNnConfig(method.input_dim, task.n_classes, tasks=method.mt_tasks,
                       age_classes=cfg.nn.age_head_classes,
                       encoder_widths=cfg.nn.encoder_widths,
                       classifier_hidden=cfg.nn.classifier_hidden),
            seed=cfg.seed,
        )
        if "age" in method.mt_tasks:
            ages = sorted({r.age for r in train_rows})
            age_map = {a: i for i, a in enumerate(ages)}
            targets["age"] = np.array([age_map[r.age] for r in train_rows])
        if "gender" in method.mt_tasks:
            targets["gender"] = np.array([0 if r.gender is Gender.MALE else 1 for r in train_rows])
    loss_params = _loss_params_for(method, cfg.coefficients.as_tuple())
    ema = train_network(net, x_train_n, targets, loss_params, cfg.loss_form_enum(), cfg.nn, cfg.seed)
    correct, total = evaluate_pain(net, ema, x_train_n, y_train, cfg.nn.eval_with_ema)
    summary = {
        "task": task.kind.value,
        "method": method.label,
        "n_train": total,
        "train_accuracy": 100.0 * correct / total,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
    }
    if holdout is not None:
        test_rows = [r for r in rows if r.subject_id == holdout]
        x_test = (build_design_matrix(test_rows, method.augment) - mean) / std
        y_test = np.array([task.class_index(r.pain_label) for r in test_rows])
        h_correct, h_total = evaluate_pain(net, ema, x_test, y_test, cfg.nn.eval_with_ema)
        summary["holdout_subject"] = holdout
        summary["holdout_accuracy"] = 100.0 * h_correct / h_total
    out_dir = Path(args.out)
    _echo_config(cfg, out_dir)
    meta = {"config_hash": cfg.config_hash(), "task": task.kind.value, "method": method.label,
            "norm_mean": [float(v) for v in mean], "norm_std": [float(v) for v in std]}
    params = dict(net.params())
    params.update(loss_params.w_params())
    save_checkpoint(out_dir / "checkpoint.npz", params, meta, ema=ema)
    (out_dir / "train_report.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    print(f"train accuracy: {summary['train_accuracy']:.2f}% over {total} windows")
    if holdout is not None:
        print(f"holdout {holdout}: {summary['holdout_accuracy']:.2f}%")
    print(f"checkpoint written to {out_dir / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_run_matrix(args) -> int:
    cfg = _resolve_config(args)
    dataset = load_dataset(args.data)
    if not dataset.has_features:
        raise DataError("run-matrix expects a feature-cache dataset")
    run_id = f"{cfg.config_hash()}-s{cfg.seed}"
    out_dir = Path(args.out) / run_id
    _echo_config(cfg, out_dir)
    outcome = run_matrix(dataset, cfg, out_dir)
    print((out_dir / "matrix.txt").read_text())
    if outcome["failures"]:
        print(f"{len(outcome['failures'])} cell(s) failed; see {out_dir / 'failures.json'}",
              file=sys.stderr)
    print(f"results in {out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    folds_dir = run_dir / "folds"
    if not folds_dir.is_dir():
        raise DataError(f"no folds directory under {run_dir}")
    reports = []
    for path in sorted(folds_dir.rglob("*.json")):
        reports.append(FoldReport.from_dict(json.loads(path.read_text())))
    if not reports:
        raise DataError(f"no fold reports under {folds_dir}")
    cells = [report_cell(r) for r in reports]
    present = {c.task for c in cells}
    tasks = [TaskSpec(k) for k in TaskKind if k.value in present]
    text = render_matrix_text(cells, tasks)
    (run_dir / "matrix.txt").write_text(text)
    (run_dir / "matrix.csv").write_text(
        render_matrix_csv(cells, {(c.group, c.method, c.task): r for c, r in zip(cells, reports)})
    )
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ecgpain",
        description="ECG pain-intensity pipeline: QRS detection, HRV features, "
                    "single/multi-task networks, LOSO evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=False):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable (e.g. nn.epochs=40)")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--workers", type=int, help="override config worker count")
        if out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth-cohort", help="generate a synthetic cohort dataset")
    common(p, out=True)
    p.add_argument("--subjects", type=int, required=True)
    p.add_argument("--windows-per-class", type=int, default=20)
    p.add_argument("--render", choices=["features", "raw"], default="features")
    p.set_defaults(func=cmd_synth_cohort)

    p = sub.add_parser("extract-features", help="raw-ECG dataset -> feature cache CSV")
    common(p)
    p.add_argument("--input", required=True, help="raw-mode dataset CSV")
    p.add_argument("--output", required=True, help="feature cache CSV to write")
    p.add_argument("--base-dir", help="directory samples_path entries are relative to")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("detect", help="run QRS detection on one samples file")
    common(p)
    p.add_argument("--input", required=True, help="single-column samples file")
    p.add_argument("--sample-rate", type=float, default=512.0)
    p.add_argument("--dump-stages", metavar="CSV",
                   help="write raw + band-passed + derivative + squared + integrated columns")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("gradcheck", help="finite-difference check of all training graphs")
    common(p)
    p.add_argument("--samples", type=int, default=100, help="parameters sampled per graph")
    p.add_argument("--corrupt", action="store_true",
                   help="negative control: corrupt one gradient and expect failure")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train one model on a feature dataset")
    common(p, out=True)
    p.add_argument("--data", required=True, help="feature cache CSV")
    p.add_argument("--task", required=True, choices=[k.value for k in TaskKind])
    p.add_argument("--method", default="ST-NN")
    p.add_argument("--holdout", help="subject to hold out for evaluation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run-matrix", help="full schemes x tasks x methods LOSO matrix")
    common(p, out=True)
    p.add_argument("--data", required=True, help="feature cache CSV")
    p.set_defaults(func=cmd_run_matrix)

    p = sub.add_parser("report", help="re-render tables from stored fold reports")
    p.add_argument("--run", required=True, help="run directory containing folds/")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, SignalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
