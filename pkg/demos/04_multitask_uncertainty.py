"""The uncertainty-weighted multi-task loss, inspected directly.

Demonstrates why the corrected combination rule exp(-w) L + w is the
trainable default: it has a finite optimum at w = ln L, while the literal
exp(+w) L + w variant decreases without bound as w goes to negative
infinity. Then trains a full multi-task network (pain + age + gender heads)
and watches the learned weights move.
"""

import numpy as np

from ecgpain import MtNnConfig, build_mt_nn, generate_synthetic_cohort
from ecgpain.experiments import TaskKind, TaskSpec, TrainConfig, build_design_matrix, train_network
from ecgpain.hrv_features import AugmentMode, normalize_features
from ecgpain.models import LossForm, MtlLossParams, mtl_loss
from ecgpain.signal_core import Gender

print("behaviour of the two combination rules on a fixed loss L = 2.0")
params = MtlLossParams.create(1.0, 0.0, 0.0)
print(f"{'w':>6} {'corrected':>10} {'literal':>10}")
for w in (-4.0, -1.0, 0.0, np.log(2.0), 2.0):
    params.w["pain"][...] = w
    corrected, _ = mtl_loss(2.0, 0.0, 0.0, params, LossForm.KENDALL_CORRECTED)
    literal, _ = mtl_loss(2.0, 0.0, 0.0, params, LossForm.PAPER_LITERAL)
    print(f"{w:6.2f} {corrected:10.4f} {literal:10.4f}")
print(f"corrected minimum sits at w* = ln 2 = {np.log(2.0):.4f}\n")

cohort = generate_synthetic_cohort(6, seed=5)
task = TaskSpec(TaskKind.MULTICLASS)
rows = [r for r in cohort.records if r.subject_id != "S001"]
x = build_design_matrix(rows, AugmentMode.NONE)
x, _, _, _ = normalize_features(x, x[:1])
ages = sorted({r.age for r in rows})
targets = {
    "pain": np.array([task.class_index(r.pain_label) for r in rows]),
    "age": np.array([ages.index(r.age) for r in rows]),
    "gender": np.array([0 if r.gender is Gender.MALE else 1 for r in rows]),
}

net = build_mt_nn(MtNnConfig(6, 5), seed=0)
loss_params = MtlLossParams.create(1.0, 0.2, 0.2)
cfg = TrainConfig(epochs=10, warmup_epochs=2, ema_decay=0.9, batch_size=128)
print(f"multi-task network: {net.param_count():,} parameters, heads "
      f"{[f'{t}:{net.heads[t].n_out}' for t in net.tasks]}")
print("uncertainty weights before:",
      {t: float(loss_params.w[t]) for t in ("pain", "age", "gender")})
train_network(net, x, targets, loss_params, LossForm.KENDALL_CORRECTED, cfg, seed=0)
print("uncertainty weights after: ",
      {t: round(float(loss_params.w[t]), 4) for t in ("pain", "age", "gender")})
print("(each weight drifts toward the log of its task's typical loss)")
