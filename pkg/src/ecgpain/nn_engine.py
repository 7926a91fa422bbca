"""Dense-network machinery: FC layers, ReLU, label-smoothed cross-entropy,
hand-written reverse-mode gradients, AdamW, the warmup+cosine schedule, and
a weight EMA. Everything is float64 and deterministic for a fixed seed.
"""

from __future__ import annotations

import json
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_VERSION = 1


class NumericalError(ArithmeticError):
    """Non-finite value encountered in a forward/backward/update pass."""


class DimensionError(ValueError):
    """Shape mismatch between layers, inputs, or optimizer state."""


# ---------------------------------------------------------------------------
# layers


@dataclass
class DenseLayer:
    """z = W s + b with W of shape (n_out, n_in)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.b.shape[0] != self.W.shape[0]:
            raise DimensionError(f"inconsistent layer shapes W{self.W.shape} b{self.b.shape}")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise NumericalError("layer parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


def dense_forward(layer: DenseLayer, s: np.ndarray) -> np.ndarray:
    """Linear aggregation of the inputs; accepts a vector or a batch."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != layer.n_in:
        raise DimensionError(f"input width {s.shape[-1]} != layer n_in {layer.n_in}")
    return s @ layer.W.T + layer.b


def relu(z: np.ndarray) -> np.ndarray:
    """max(0, z); exactly 0 at z = 0."""
    return np.maximum(0.0, z)


def he_uniform(n_out: int, n_in: int, rng: np.random.Generator) -> DenseLayer:
    """Fan-in scaled uniform init suited to ReLU stacks; zero biases."""
    limit = np.sqrt(6.0 / n_in)
    return DenseLayer(rng.uniform(-limit, limit, size=(n_out, n_in)), np.zeros(n_out))


class Mlp:
    """A stack of dense layers with per-layer optional ReLU."""

    def __init__(self, layers: list[DenseLayer], relu_after: list[bool]):
        if len(layers) != len(relu_after):
            raise DimensionError("one relu flag per layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.n_out != nxt.n_in:
                raise DimensionError("adjacent layer widths do not chain")
        self.layers = layers
        self.relu_after = list(relu_after)

    @classmethod
    def build(cls, widths: list[int], relu_after: list[bool], rng: np.random.Generator) -> "Mlp":
        layers = [he_uniform(n_out, n_in, rng) for n_in, n_out in zip(widths, widths[1:])]
        return cls(layers, relu_after)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def param_count(self) -> int:
        return sum(layer.W.size + layer.b.size for layer in self.layers)

    def params(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"{prefix}{i}.W"] = layer.W
            out[f"{prefix}{i}.b"] = layer.b
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x, dtype=np.float64)
        for layer, act in zip(self.layers, self.relu_after):
            a = dense_forward(layer, a)
            if act:
                a = relu(a)
        return a

    def forward_cached(self, x: np.ndarray):
        """Forward pass keeping the layer inputs and pre-activations."""
        a = np.asarray(x, dtype=np.float64)
        cache = []
        for layer, act in zip(self.layers, self.relu_after):
            z = dense_forward(layer, a)
            cache.append((a, z))
            a = relu(z) if act else z
        return a, cache

    def backward(self, cache, grad_out: np.ndarray, prefix: str = ""):
        """Backpropagate; returns (param grads dict, grad wrt the input)."""
        g = np.asarray(grad_out, dtype=np.float64)
        grads: dict[str, np.ndarray] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            a_in, z = cache[i]
            if self.relu_after[i]:
                g = g * (z > 0)  # zero subgradient at z = 0
            if g.ndim == 1:
                grads[f"{prefix}{i}.W"] = np.outer(g, a_in)
                grads[f"{prefix}{i}.b"] = g.copy()
            else:
                grads[f"{prefix}{i}.W"] = g.T @ a_in
                grads[f"{prefix}{i}.b"] = g.sum(axis=0)
            g = g @ self.layers[i].W
        return grads, g


# ---------------------------------------------------------------------------
# losses


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable log softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def smoothing_target(true_class: int, n_out: int, epsilon: float) -> np.ndarray:
    """Label-smoothed target: 1-eps on the true class, eps/(n-1) elsewhere."""
    if n_out < 2:
        raise DimensionError("n_out must be >= 2")
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must be in [0, 1), got {epsilon}")
    if not 0 <= true_class < n_out:
        raise ValueError(f"class {true_class} out of range [0, {n_out})")
    p = np.full(n_out, epsilon / (n_out - 1))
    p[true_class] = 1.0 - epsilon
    return p


def smoothed_cross_entropy(
    logits: np.ndarray, true_class: int, n_out: int | None = None, epsilon: float = 0.0
) -> float:
    """Cross-entropy of the softmax output against a smoothed target."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError("smoothed_cross_entropy takes a single logits vector")
    if n_out is None:
        n_out = z.shape[0]
    if n_out != z.shape[0]:
        raise DimensionError(f"n_out {n_out} != logits width {z.shape[0]}")
    p = smoothing_target(true_class, n_out, epsilon)
    return float(-(p * log_softmax(z)).sum())


def smoothed_cross_entropy_batch(
    logits: np.ndarray, classes: np.ndarray, epsilon: float = 0.0
):
    """Batch-mean smoothed cross-entropy and its gradient wrt the logits."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError("expected (batch, classes) logits")
    n, n_out = z.shape
    classes = np.asarray(classes, dtype=np.int64)
    if classes.shape != (n,):
        raise DimensionError("one class label per batch row")
    targets = np.stack([smoothing_target(int(c), n_out, epsilon) for c in classes])
    log_q = log_softmax(z)
    loss = float(-(targets * log_q).mean(axis=0).sum())
    dlogits = (np.exp(log_q) - targets) / n
    return loss, dlogits


@dataclass(frozen=True)
class SquaredError:
    """0.5 * sum of squared residuals, batch-averaged."""

    def value_and_grad(self, output: np.ndarray, target: np.ndarray):
        out = np.asarray(output, dtype=np.float64)
        tgt = np.asarray(target, dtype=np.float64)
        if out.shape != tgt.shape:
            raise DimensionError("output/target shape mismatch")
        diff = out - tgt
        if out.ndim == 1:
            return float(0.5 * (diff**2).sum()), diff
        n = out.shape[0]
        return float(0.5 * (diff**2).sum() / n), diff / n


@dataclass(frozen=True)
class SmoothedCrossEntropy:
    epsilon: float = 0.0

    def value_and_grad(self, logits: np.ndarray, classes: np.ndarray):
        z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
        cls = np.atleast_1d(np.asarray(classes, dtype=np.int64))
        loss, dlogits = smoothed_cross_entropy_batch(z, cls, self.epsilon)
        if np.asarray(logits).ndim == 1:
            dlogits = dlogits[0]
        return loss, dlogits


def backward(net: Mlp, x: np.ndarray, target, loss_spec):
    """Loss value and gradients for every parameter of ``net``.

    Raises :class:`NumericalError` if the forward pass produced non-finite
    activations.
    """
    out, cache = net.forward_cached(x)
    if not np.all(np.isfinite(out)):
        raise NumericalError("non-finite activations in forward pass")
    loss, dout = loss_spec.value_and_grad(out, target)
    grads, _ = net.backward(cache, dout)
    return loss, grads


# ---------------------------------------------------------------------------
# optimization


class AdamW:
    """AdamW with decoupled weight decay and bias correction.

    ``decay_filter(name)`` selects which parameters receive weight decay;
    by default all of them do. The learning rate is supplied per step so an
    external schedule can drive it.
    """

    def __init__(
        self,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.1,
        decay_filter=None,
    ):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decay_filter = decay_filter
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None):
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if g.shape != p.shape:
                raise DimensionError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            if self.weight_decay != 0.0 and (self.decay_filter is None or self.decay_filter(name)):
                p *= 1.0 - lr * self.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k, a in self.m.items():
            out[f"m.{k}"] = a
        for k, a in self.v.items():
            out[f"v.{k}"] = a
        return out


def adamw_step(params, grads, state: AdamW, lr: float | None = None):
    """Functional alias for one optimizer step; mutates params and state."""
    state.step(params, grads, lr)
    return params, state


def lr_at(
    epoch: int,
    base_lr: float = 1e-3,
    warmup_epochs: int = 50,
    total_epochs: int = 300,
) -> float:
    """Linear warmup from 0 over ``warmup_epochs``, then cosine decay to 0."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    span = total_epochs - warmup_epochs
    return 0.5 * base_lr * (1.0 + np.cos(np.pi * (epoch - warmup_epochs) / span))


class WeightEma:
    """Shadow copy of the parameters, updated geometrically each step."""

    def __init__(self, params: dict[str, np.ndarray], decay: float = 0.999):
        if not 0.0 <= decay < 1.0:
            raise ValueError(f"EMA decay must be in [0, 1), got {decay}")
        self.decay = decay
        self.shadow = {k: v.copy() for k, v in params.items()}

    def update(self, params: dict[str, np.ndarray]):
        for name, p in params.items():
            s = self.shadow.get(name)
            if s is None or s.shape != p.shape:
                raise DimensionError(f"EMA shadow missing or mismatched for {name}")
            s *= self.decay
            s += (1.0 - self.decay) * p

    @contextmanager
    def swapped(self, params: dict[str, np.ndarray]):
        """Evaluate with the shadow weights, then restore the live ones."""
        backup = {k: v.copy() for k, v in params.items()}
        for k in params:
            params[k][...] = self.shadow[k]
        try:
            yield
        finally:
            for k in params:
                params[k][...] = backup[k]


def ema_update(ema: WeightEma, params):
    ema.update(params)
    return ema


def ema_swap_for_eval(ema: WeightEma, params):
    return ema.swapped(params)


# ---------------------------------------------------------------------------
# gradient verification


def finite_difference_check(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    rng: np.random.Generator,
    n_samples: int = 100,
    step: float = 1e-5,
):
    """Compare analytic gradients against central differences.

    ``loss_fn()`` must read the parameter arrays in place. Every scalar
    (0-d) parameter is always checked; ``n_samples`` further entries are
    drawn uniformly over all other parameters. Returns a summary dict with
    the maximum relative error and the worst offender.
    """
    entries: list[tuple[str, int]] = []
    names = [n for n in sorted(params) if n in analytic]
    for name in names:
        if params[name].size == 1:
            entries.append((name, 0))
    pool = [(n, params[n].size) for n in names if params[n].size > 1]
    total = sum(size for _, size in pool)
    if total and n_samples:
        picks = rng.integers(0, total, size=n_samples)
        offsets = np.cumsum([size for _, size in pool])
        for p in picks:
            j = int(np.searchsorted(offsets, p, side="right"))
            base = 0 if j == 0 else offsets[j - 1]
            entries.append((pool[j][0], int(p - base)))

    worst = {"max_rel_error": 0.0, "param": None, "index": None, "n_checked": len(entries)}
    for name, flat_idx in entries:
        arr = params[name].reshape(-1)
        original = arr[flat_idx]
        arr[flat_idx] = original + step
        up = loss_fn()
        arr[flat_idx] = original - step
        down = loss_fn()
        arr[flat_idx] = original
        fd = (up - down) / (2.0 * step)
        an = float(analytic[name].reshape(-1)[flat_idx])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-6)
        if rel > worst["max_rel_error"]:
            worst.update(max_rel_error=float(rel), param=name, index=flat_idx)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: dict[str, np.ndarray], meta: dict | None = None,
                    ema: WeightEma | None = None, optimizer: AdamW | None = None):
    """Write a versioned .npz holding parameters, EMA shadow, and optimizer
    moments; float64 arrays round-trip bit-exactly."""
    meta = dict(meta or {})
    meta["checkpoint_version"] = CHECKPOINT_VERSION
    meta["param_shapes"] = {k: list(v.shape) for k, v in params.items()}
    arrays = {f"param.{k}": v for k, v in params.items()}
    if ema is not None:
        meta["ema_decay"] = ema.decay
        arrays.update({f"ema.{k}": v for k, v in ema.shadow.items()})
    if optimizer is not None:
        meta["optimizer_step"] = optimizer.step_count
        meta["optimizer"] = {
            "lr": optimizer.lr,
            "betas": [optimizer.beta1, optimizer.beta2],
            "eps": optimizer.eps,
            "weight_decay": optimizer.weight_decay,
        }
        arrays.update({f"opt.{k}": v for k, v in optimizer.state_arrays().items()})
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Read back a checkpoint; returns (params, meta, ema_shadow, opt_arrays)."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('checkpoint_version')}")
        params = {}
        ema_shadow = {}
        opt_arrays = {}
        for key in data.files:
            if key.startswith("param."):
                params[key[len("param."):]] = data[key]
            elif key.startswith("ema."):
                ema_shadow[key[len("ema."):]] = data[key]
            elif key.startswith("opt."):
                opt_arrays[key[len("opt."):]] = data[key]
    return params, meta, ema_shadow, opt_arrays
