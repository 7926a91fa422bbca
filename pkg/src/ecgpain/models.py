"""Network assembly and the uncertainty-weighted multi-task loss.

Both architectures share one encoder shape (four ReLU layers) and one
classifier shape (two linear layers with no nonlinearity between them).
The multi-task variant attaches age and gender heads that mirror the pain
classifier, and combines the per-task losses with learned homoscedastic
uncertainty weights.

The combination rule is selectable. ``PAPER_LITERAL`` scales each task loss
by exp(+w); that expression has no finite minimum in w (its derivative
c * (exp(w) L + 1) is positive everywhere), so joint optimization drives the
weights to -inf. ``KENDALL_CORRECTED`` uses exp(-w) L + w, whose optimum is
w* = ln L, and is the default used for training.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .nn_engine import (
    DimensionError,
    Mlp,
    NumericalError,
    smoothed_cross_entropy_batch,
)

TASKS = ("pain", "age", "gender")

VALID_INPUT_DIMS = (6, 7, 8)
VALID_PAIN_CLASSES = (2, 5)


class LossForm(Enum):
    PAPER_LITERAL = "paper_literal"
    KENDALL_CORRECTED = "kendall"


def component_rng(seed: int, component: str) -> np.random.Generator:
    """Independent generator per named component.

    Keeps encoder and pain-head initializations identical between the
    single-task and multi-task builds for the same seed, regardless of how
    many auxiliary heads exist.
    """
    return np.random.default_rng([seed, zlib.crc32(component.encode())])


@dataclass(frozen=True)
class StNnConfig:
    input_dim: int
    n_classes: int
    encoder_widths: tuple[int, ...] = (256, 512, 1024, 1024)
    classifier_hidden: int = 1024

    def __post_init__(self):
        if self.input_dim not in VALID_INPUT_DIMS:
            raise DimensionError(f"input_dim must be one of {VALID_INPUT_DIMS}, got {self.input_dim}")
        if self.n_classes not in VALID_PAIN_CLASSES:
            raise DimensionError(f"n_classes must be one of {VALID_PAIN_CLASSES}, got {self.n_classes}")
        if len(self.encoder_widths) != 4 or any(w < 1 for w in self.encoder_widths):
            raise DimensionError("encoder is four layers of positive width")
        if self.classifier_hidden < 1:
            raise DimensionError("classifier hidden width must be positive")


@dataclass(frozen=True)
class MtNnConfig:
    input_dim: int
    n_pain_classes: int
    tasks: tuple[str, ...] = TASKS
    age_classes: int = 36
    gender_classes: int = 2
    encoder_widths: tuple[int, ...] = (256, 512, 1024, 1024)
    classifier_hidden: int = 1024

    def __post_init__(self):
        if "pain" not in self.tasks:
            raise DimensionError("task set must contain the pain task")
        unknown = set(self.tasks) - set(TASKS)
        if unknown:
            raise DimensionError(f"unknown tasks {sorted(unknown)}")
        StNnConfig(
            self.input_dim, self.n_pain_classes, self.encoder_widths, self.classifier_hidden
        )
        if self.age_classes < 2 or self.gender_classes < 2:
            raise DimensionError("auxiliary heads need at least 2 classes")

    def head_sizes(self) -> dict[str, int]:
        sizes = {"pain": self.n_pain_classes, "age": self.age_classes, "gender": self.gender_classes}
        return {t: sizes[t] for t in self.tasks}


class MultiHeadNet:
    """Shared encoder feeding one classifier head per task."""

    def __init__(self, encoder: Mlp, heads: dict[str, Mlp]):
        if "pain" not in heads:
            raise DimensionError("a network always has a pain head")
        for name, head in heads.items():
            if head.n_in != encoder.n_out:
                raise DimensionError(f"head {name} does not fit the encoder output")
        self.encoder = encoder
        self.heads = heads

    @property
    def tasks(self) -> tuple[str, ...]:
        return tuple(t for t in TASKS if t in self.heads)

    def params(self) -> dict[str, np.ndarray]:
        out = self.encoder.params("encoder.")
        for t in self.tasks:
            out.update(self.heads[t].params(f"head.{t}."))
        return out

    def param_count(self) -> int:
        return self.encoder.param_count() + sum(h.param_count() for h in self.heads.values())

    def forward(self, x: np.ndarray, tasks: tuple[str, ...] | None = None) -> dict[str, np.ndarray]:
        h = self.encoder.forward(x)
        return {t: self.heads[t].forward(h) for t in (tasks or self.tasks)}

    def pain_logits(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, tasks=("pain",))["pain"]


def _build_head(n_in: int, hidden: int, n_out: int, rng) -> Mlp:
    # two linear layers, no nonlinearity between them
    return Mlp.build([n_in, hidden, n_out], [False, False], rng)


def build_st_nn(config: StNnConfig, seed: int = 0) -> MultiHeadNet:
    """Single-task network: encoder plus the pain classifier."""
    widths = [config.input_dim, *config.encoder_widths]
    encoder = Mlp.build(widths, [True] * 4, component_rng(seed, "encoder"))
    head = _build_head(
        config.encoder_widths[-1], config.classifier_hidden, config.n_classes,
        component_rng(seed, "head.pain"),
    )
    return MultiHeadNet(encoder, {"pain": head})


def build_mt_nn(config: MtNnConfig, seed: int = 0) -> MultiHeadNet:
    """Multi-task network: shared encoder, pain head, auxiliary heads."""
    widths = [config.input_dim, *config.encoder_widths]
    encoder = Mlp.build(widths, [True] * 4, component_rng(seed, "encoder"))
    heads = {}
    for task, n_out in config.head_sizes().items():
        heads[task] = _build_head(
            config.encoder_widths[-1], config.classifier_hidden, n_out,
            component_rng(seed, f"head.{task}"),
        )
    return MultiHeadNet(encoder, heads)


@dataclass
class MtlLossParams:
    """Fixed per-task coefficients and the learned uncertainty scalars.

    The scalars are 0-d arrays so the optimizer can update them in place
    alongside the network weights.
    """

    c: dict[str, float]
    w: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for t in TASKS:
            self.c.setdefault(t, 0.0)
            if self.c[t] < 0:
                raise ValueError(f"coefficient for {t} must be >= 0")
            self.w.setdefault(t, np.zeros(()))
            self.w[t] = np.asarray(self.w[t], dtype=np.float64).reshape(())

    @classmethod
    def create(cls, c_pain: float = 1.0, c_age: float = 0.2, c_gender: float = 0.2) -> "MtlLossParams":
        return cls(c={"pain": c_pain, "age": c_age, "gender": c_gender})

    def active_tasks(self) -> tuple[str, ...]:
        return tuple(t for t in TASKS if self.c[t] > 0.0)

    def uncertainty_trainable(self) -> bool:
        # with a single active task the scalar only rescales the loss and
        # has no balancing role; freezing it keeps the trajectory identical
        # to single-task training
        return len(self.active_tasks()) >= 2

    def w_params(self) -> dict[str, np.ndarray]:
        return {f"loss.w_{t}": self.w[t] for t in self.active_tasks()}


def _task_contribution(loss: float, w: float, c: float, form: LossForm):
    """Contribution, d/dL, and d/dw for one task."""
    if form is LossForm.PAPER_LITERAL:
        scale = np.exp(w)
        return (scale * loss + w) * c, scale * c, (scale * loss + 1.0) * c
    scale = np.exp(-w)
    return (scale * loss + w) * c, scale * c, (1.0 - scale * loss) * c


def mtl_loss(
    l_pain: float,
    l_age: float,
    l_gender: float,
    params: MtlLossParams,
    form: LossForm = LossForm.KENDALL_CORRECTED,
) -> tuple[float, dict[str, float]]:
    """Combine the task losses; returns (total, per-task contributions)."""
    losses = {"pain": l_pain, "age": l_age, "gender": l_gender}
    if not all(np.isfinite(v) for v in losses.values()):
        raise NumericalError("task losses must be finite")
    total = 0.0
    contributions = {}
    for t in TASKS:
        contrib, _, _ = _task_contribution(losses[t], float(params.w[t]), params.c[t], form)
        contributions[t] = float(contrib)
        total += contrib
    return float(total), contributions


def mt_forward_loss(
    net: MultiHeadNet,
    x: np.ndarray,
    targets: dict[str, np.ndarray],
    params: MtlLossParams,
    form: LossForm = LossForm.KENDALL_CORRECTED,
    smoothing: float = 0.1,
) -> tuple[float, dict[str, float]]:
    """Total uncertainty-weighted loss over one batch.

    Per-task losses are batch-mean smoothed cross-entropies. Tasks whose
    coefficient is zero (or whose head is absent) contribute exactly zero.
    """
    total, parts, _ = _mt_loss_impl(net, x, targets, params, form, smoothing, with_grads=False)
    return total, parts


def mt_backward(
    net: MultiHeadNet,
    x: np.ndarray,
    targets: dict[str, np.ndarray],
    params: MtlLossParams,
    form: LossForm = LossForm.KENDALL_CORRECTED,
    smoothing: float = 0.1,
) -> tuple[float, dict[str, float], dict[str, np.ndarray]]:
    """Loss plus gradients for every network parameter and active scalar."""
    return _mt_loss_impl(net, x, targets, params, form, smoothing, with_grads=True)


def gradcheck_suite(
    seed: int = 0,
    n_samples: int = 100,
    batch: int = 4,
    smoothing: float = 0.1,
    corrupt: bool = False,
) -> list[dict]:
    """Finite-difference verification of every training graph.

    Covers the single-task network (binary and 5-class) and the full
    multi-task network with both loss forms, sampling parameters from every
    layer plus the uncertainty scalars. ``corrupt`` perturbs one analytic
    gradient as a negative control.
    """
    from .nn_engine import finite_difference_check

    rng = np.random.default_rng(seed)
    results = []

    def check(label, net, loss_params, form, targets):
        x = rng.standard_normal((batch, net.encoder.n_in))
        all_params = dict(net.params())
        all_params.update(loss_params.w_params())
        _, _, grads = mt_backward(net, x, targets, loss_params, form, smoothing)
        if corrupt:
            grads = {k: g + 1e-2 for k, g in grads.items()}
        summary = finite_difference_check(
            lambda: mt_forward_loss(net, x, targets, loss_params, form, smoothing)[0],
            all_params,
            grads,
            rng,
            n_samples=n_samples,
        )
        summary["graph"] = label
        results.append(summary)

    for n_classes in (2, 5):
        net = build_st_nn(StNnConfig(6, n_classes), seed=seed)
        y = rng.integers(0, n_classes, size=batch)
        check(f"st-nn/{n_classes}-class", net, MtlLossParams.create(1.0, 0.0, 0.0),
              LossForm.KENDALL_CORRECTED, {"pain": y})

    cfg = MtNnConfig(6, 5)
    targets = {
        "pain": rng.integers(0, 5, size=batch),
        "age": rng.integers(0, cfg.age_classes, size=batch),
        "gender": rng.integers(0, 2, size=batch),
    }
    for form in LossForm:
        net = build_mt_nn(cfg, seed=seed)
        loss_params = MtlLossParams.create(1.0, 0.2, 0.2)
        loss_params.w["pain"][...] = 0.05
        loss_params.w["age"][...] = -0.1
        loss_params.w["gender"][...] = 0.2
        check(f"mt-nn/t(ga)/{form.value}", net, loss_params, form, targets)
    return results


def _mt_loss_impl(net, x, targets, params, form, smoothing, with_grads):
    active = tuple(t for t in params.active_tasks() if t in net.heads)
    if not active:
        raise ValueError("no active task has a head; nothing to optimize")
    for t in active:
        if t not in targets:
            raise ValueError(f"missing labels for active task {t!r}")

    x = np.asarray(x, dtype=np.float64)
    if with_grads:
        h, enc_cache = net.encoder.forward_cached(x)
    else:
        h = net.encoder.forward(x)
    if not np.all(np.isfinite(h)):
        raise NumericalError("non-finite encoder activations")

    task_loss = {t: 0.0 for t in TASKS}
    grads: dict[str, np.ndarray] = {}
    grad_h = np.zeros_like(h)
    for t in active:
        head = net.heads[t]
        if with_grads:
            logits, cache = head.forward_cached(h)
        else:
            logits = head.forward(h)
        loss_t, dlogits = smoothed_cross_entropy_batch(logits, targets[t], smoothing)
        task_loss[t] = loss_t
        if with_grads:
            _, dL, dw = _task_contribution(loss_t, float(params.w[t]), params.c[t], form)
            head_grads, g_h = head.backward(cache, dlogits * dL, prefix=f"head.{t}.")
            grads.update(head_grads)
            grad_h = grad_h + g_h
            grads[f"loss.w_{t}"] = np.asarray(dw).reshape(())

    total, parts = mtl_loss(task_loss["pain"], task_loss["age"], task_loss["gender"], params, form)
    if with_grads:
        enc_grads, _ = net.encoder.backward(enc_cache, grad_h, prefix="encoder.")
        grads.update(enc_grads)
        return total, parts, grads
    return total, parts, None
