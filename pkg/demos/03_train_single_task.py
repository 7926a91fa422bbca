"""Train the single-task network on one synthetic LOSO fold, by hand.

Builds the 256/512/1024/1024 encoder plus two-layer classifier, trains it
with AdamW under the warmup+cosine schedule with label smoothing and weight
EMA, and evaluates the held-out subject. This is what every fold of a LOSO
run does internally.
"""

import numpy as np

from ecgpain import StNnConfig, TaskKind, build_st_nn, generate_synthetic_cohort, lr_at
from ecgpain.experiments import TaskSpec, TrainConfig, build_design_matrix, evaluate_pain, train_network
from ecgpain.hrv_features import AugmentMode, normalize_features
from ecgpain.models import LossForm, MtlLossParams

cohort = generate_synthetic_cohort(6, seed=3)
task = TaskSpec(TaskKind.NP_VS_P4)
held_out = "S006"

keep = set(task.keep_labels())
rows = [r for r in cohort.records if r.pain_label in keep]
train_rows = [r for r in rows if r.subject_id != held_out]
test_rows = [r for r in rows if r.subject_id == held_out]
print(f"task {task.display}: {len(train_rows)} training windows, "
      f"{len(test_rows)} held-out windows from {held_out}")

x_train = build_design_matrix(train_rows, AugmentMode.NONE)
x_test = build_design_matrix(test_rows, AugmentMode.NONE)
x_train, x_test, _, _ = normalize_features(x_train, x_test)
y_train = np.array([task.class_index(r.pain_label) for r in train_rows])
y_test = np.array([task.class_index(r.pain_label) for r in test_rows])

cfg = TrainConfig(epochs=15, warmup_epochs=3, ema_decay=0.95, batch_size=128)
print("schedule samples:", [f"{e}: {lr_at(e, cfg.base_lr, cfg.warmup_epochs, cfg.epochs):.2e}"
                            for e in (0, 3, 8, 14)])

net = build_st_nn(StNnConfig(6, task.n_classes), seed=0)
print(f"network parameters: {net.param_count():,}")

ema = train_network(net, x_train, {"pain": y_train},
                    MtlLossParams.create(1.0, 0.0, 0.0), LossForm.KENDALL_CORRECTED, cfg, seed=0)

correct, total = evaluate_pain(net, ema, x_test, y_test)
print(f"held-out accuracy with EMA weights: {100.0 * correct / total:.1f}% ({correct}/{total})")
correct_live, _ = evaluate_pain(net, ema, x_test, y_test, use_ema=False)
print(f"held-out accuracy with live weights: {100.0 * correct_live / total:.1f}%")
