"""Population training for small MLP classifiers, with pruning and quantization.

Each population member is a plain ReLU MLP trained by minibatch SGD on
softmax cross-entropy plus weight decay, from its own seeded random
initialization (model k uses seed + k). Gradual magnitude pruning runs
during training on a cubic sparsity ramp; quantization is applied after
training. Everything is float64 numpy and fully deterministic given
(seed, config, dataset).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .data_model import (
    CompressionSpec,
    LabeledDataset,
    PredictionLog,
    atomic_write_text,
)
from .errors import ConfigError, DivergenceError, ShapeError


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2500
    batch_size: int = 64
    learning_rate: float = 0.1
    lr_decay_steps: int | None = 1500
    lr_decay_factor: float = 0.3
    weight_decay: float = 1.5e-3
    seed: int = 0
    population_size: int = 10
    hidden_dims: tuple[int, ...] = (320,)
    prune_biases: bool = True
    prune_final_layer: bool = True

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.population_size < 1:
            raise ConfigError("population_size must be >= 1")
        if self.lr_decay_steps is not None and self.lr_decay_steps < 1:
            raise ConfigError("lr_decay_steps must be >= 1")
        if self.lr_decay_factor <= 0:
            raise ConfigError("lr_decay_factor must be positive")


@dataclass(frozen=True)
class PruneSchedule:
    """Cubic sparsity ramp: events every `prune_every` steps in [start, end]."""

    target_sparsity: float
    prune_start: int
    prune_end: int
    prune_every: int

    def __post_init__(self):
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ConfigError("target_sparsity must be in [0, 1)")
        if not 0 <= self.prune_start < self.prune_end:
            raise ConfigError("need 0 <= prune_start < prune_end")
        if self.prune_every < 1:
            raise ConfigError("prune_every must be >= 1")
        if self.prune_end - self.prune_start < self.prune_every:
            raise ConfigError("at least one pruning interval must fit in the ramp")


@dataclass(frozen=True)
class QuantizationScheme:
    kind: str  # float16 | dynamic_int8 | fixed_int8
    representative_count: int = 100

    def __post_init__(self):
        if self.kind not in ("float16", "dynamic_int8", "fixed_int8"):
            raise ConfigError(f"unknown quantization kind {self.kind!r}")
        if self.representative_count < 1:
            raise ConfigError("representative_count must be >= 1")


_METHOD_TO_KIND = {
    "quant_float16": "float16",
    "quant_dynamic_int8": "dynamic_int8",
    "quant_fixed_int8": "fixed_int8",
}


class MLPModel:
    """ReLU MLP with per-tensor binary masks mirroring the weights and biases.

    Weight matrices have shape (fan_in, fan_out); a masked entry is exactly
    0.0. `activation_ranges` holds per-layer pre-activation [min, max] pairs
    for fixed-point inference, None otherwise.
    """

    def __init__(
        self,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        weight_masks: list[np.ndarray] | None = None,
        bias_masks: list[np.ndarray] | None = None,
        activation_ranges: list[tuple[float, float]] | None = None,
    ):
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must have one entry per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} vs bias {b.shape}")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: fan-in mismatch")
        self.weight_masks = (
            [np.ones_like(w) for w in self.weights]
            if weight_masks is None
            else [np.asarray(m, dtype=np.float64) for m in weight_masks]
        )
        self.bias_masks = (
            [np.ones_like(b) for b in self.biases]
            if bias_masks is None
            else [np.asarray(m, dtype=np.float64) for m in bias_masks]
        )
        self.activation_ranges = activation_ranges

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def initialize(cls, layer_dims: tuple[int, ...], rng: np.random.Generator) -> "MLPModel":
        if len(layer_dims) < 2 or any(d < 1 for d in layer_dims):
            raise ConfigError(f"bad layer dims {layer_dims}")
        weights = []
        biases = []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    def copy(self) -> "MLPModel":
        return MLPModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [m.copy() for m in self.weight_masks],
            [m.copy() for m in self.bias_masks],
            list(self.activation_ranges) if self.activation_ranges else None,
        )

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on a (N, d) batch, clamping pre-activations when calibrated."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[np.newaxis, :]
        if x.shape[1] != self.layer_dims[0]:
            raise ShapeError(
                f"input dim {x.shape[1]} does not match model dim {self.layer_dims[0]}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if self.activation_ranges is not None:
                lo, hi = self.activation_ranges[i]
                z = np.clip(z, lo, hi)
            h = z if i == last else np.maximum(z, 0.0)
        return h[0] if squeeze else h


def predict_topk(model: MLPModel, features: np.ndarray, k: int) -> list[int]:
    """Top-k class labels ordered by descending logit, ties to the lower label."""
    if k < 1 or k > model.num_classes:
        raise ShapeError(f"k={k} outside [1, {model.num_classes}]")
    logits = model.logits(np.asarray(features, dtype=np.float64))
    if logits.ndim != 1:
        raise ShapeError("predict_topk expects a single example")
    order = np.argsort(-logits, kind="stable")
    return [int(c) for c in order[:k]]


def rank_topk(logits: np.ndarray, k: int) -> np.ndarray:
    """Batched top-k label ranking with the same tie-break as predict_topk."""
    return np.argsort(-logits, axis=1, kind="stable")[:, :k]


# ---------------------------------------------------------------------------
# pruning
# ---------------------------------------------------------------------------

def sparsity_at_step(schedule: PruneSchedule, step: int) -> float:
    """Sparsity target in effect at `step`; constant between pruning events.

    The ramp is cubic: s(p) = s_f * (1 - (1 - p)^3) with p the fraction of
    the pruning window elapsed, evaluated only at event steps
    (start, start + every, ...); the last event's value holds in between.
    """
    if step < 0:
        raise ConfigError("step must be >= 0")
    start = schedule.prune_start
    if step < start:
        return 0.0
    if step >= schedule.prune_end:
        return schedule.target_sparsity
    event = start + schedule.prune_every * ((step - start) // schedule.prune_every)
    p = (event - start) / (schedule.prune_end - start)
    return schedule.target_sparsity * (1.0 - (1.0 - p) ** 3)


def apply_magnitude_mask(
    weights: np.ndarray,
    current_mask: np.ndarray | None,
    target_sparsity: float,
) -> np.ndarray:
    """Mask the round(s*n) smallest-magnitude entries of one tensor.

    Ties are broken by flattened index ascending. Entries masked earlier are
    exactly 0.0 (the training loop keeps them zeroed), so they sort first and
    the masked set grows monotonically across events.
    """
    if not 0.0 <= target_sparsity < 1.0:
        raise ConfigError("target_sparsity must be in [0, 1)")
    flat = np.abs(np.asarray(weights, dtype=np.float64).ravel())
    n = flat.size
    z = round(target_sparsity * n)
    mask = np.ones(n)
    if z > 0:
        order = np.argsort(flat, kind="stable")
        mask[order[:z]] = 0.0
    del current_mask  # kept for signature parity; zeros already encode history
    return mask.reshape(np.asarray(weights).shape)


def _prunable_tensors(model: MLPModel, config: TrainConfig):
    """Yield (tensor, mask_list, index) pairs subject to pruning."""
    last = len(model.weights) - 1
    for i in range(len(model.weights)):
        if i == last and not config.prune_final_layer:
            continue
        yield model.weights, model.weight_masks, i
        if config.prune_biases:
            yield model.biases, model.bias_masks, i


def _refresh_masks(model: MLPModel, config: TrainConfig, target: float) -> None:
    for tensors, masks, i in _prunable_tensors(model, config):
        masks[i] = apply_magnitude_mask(tensors[i], masks[i], target)
        tensors[i] *= masks[i]


# ---------------------------------------------------------------------------
# loss / gradients
# ---------------------------------------------------------------------------

def loss_and_gradients(
    model: MLPModel,
    x: np.ndarray,
    y: np.ndarray,
    weight_decay: float = 0.0,
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean softmax cross-entropy plus 0.5*wd*sum(W^2), with exact gradients.

    Weight decay applies to weight matrices only. The returned gradients are
    for all entries; the caller re-applies masks after the update.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = x.shape[0]
    # overflow/invalid values surface as a non-finite loss (DivergenceError
    # in the training loop), so numpy warnings here are redundant noise
    with np.errstate(over="ignore", invalid="ignore"):
        acts = [x]
        pre = []
        h = x
        last = len(model.weights) - 1
        for i, (w, b) in enumerate(zip(model.weights, model.biases)):
            z = h @ w + b
            pre.append(z)
            h = z if i == last else np.maximum(z, 0.0)
            acts.append(h)

        logits = acts[-1]
        shifted = logits - logits.max(axis=1, keepdims=True)
        exp = np.exp(shifted)
        probs = exp / exp.sum(axis=1, keepdims=True)
        nll = -(shifted[np.arange(n), y] - np.log(exp.sum(axis=1)))
        loss = float(nll.mean())
        if weight_decay:
            loss += 0.5 * weight_decay * sum(
                float((w * w).sum()) for w in model.weights
            )

        delta = probs
        delta[np.arange(n), y] -= 1.0
        delta /= n

        grads_w: list[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
        grads_b: list[np.ndarray] = [None] * len(model.biases)  # type: ignore[list-item]
        for i in range(last, -1, -1):
            grads_w[i] = acts[i].T @ delta
            if weight_decay:
                grads_w[i] += weight_decay * model.weights[i]
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0.0)
    return loss, grads_w, grads_b


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def _quantize_tensor_int8(w: np.ndarray) -> np.ndarray:
    max_abs = float(np.abs(w).max()) if w.size else 0.0
    if max_abs == 0.0:
        return w.copy()  # degenerate tensor: scale would be 0; pass through
    scale = max_abs / 127.0
    q = np.clip(_round_half_away(w / scale), -127, 127)
    return q * scale


def quantize_model(
    model: MLPModel,
    scheme: QuantizationScheme,
    calibration: np.ndarray | None = None,
) -> MLPModel:
    """Post-training quantization; returns a new model, the input is untouched.

    float16 rounds every weight and bias to the nearest IEEE-754 binary16
    value. dynamic_int8 applies per-tensor symmetric int8 to the weight
    matrices. fixed_int8 additionally records each layer's pre-activation
    range over the calibration slice; inference then saturates to it.
    """
    out = model.copy()
    if scheme.kind == "float16":
        out.weights = [w.astype(np.float16).astype(np.float64) for w in out.weights]
        out.biases = [b.astype(np.float16).astype(np.float64) for b in out.biases]
        return out

    out.weights = [_quantize_tensor_int8(w) for w in out.weights]
    if scheme.kind == "dynamic_int8":
        return out

    # fixed_int8: calibrate activation ranges with the quantized weights
    if calibration is None:
        raise ConfigError("fixed_int8 quantization requires calibration examples")
    calibration = np.asarray(calibration, dtype=np.float64)
    if calibration.shape[0] < 1:
        raise ConfigError("calibration slice is empty")
    ranges: list[tuple[float, float]] = []
    h = calibration
    last = len(out.weights) - 1
    for i, (w, b) in enumerate(zip(out.weights, out.biases)):
        z = h @ w + b
        ranges.append((float(z.min()), float(z.max())))
        h = z if i == last else np.maximum(z, 0.0)
    out.activation_ranges = ranges
    return out


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _train_single(
    train_ds: LabeledDataset,
    config: TrainConfig,
    compression: CompressionSpec,
    schedule: PruneSchedule | None,
    model_seed: int,
) -> MLPModel:
    rng = np.random.default_rng(model_seed)
    dims = (train_ds.dim,) + tuple(config.hidden_dims) + (train_ds.num_classes,)
    model = MLPModel.initialize(dims, rng)

    x_all = train_ds.feature_matrix
    y_all = train_ds.labels
    n = x_all.shape[0]
    batch = min(config.batch_size, n)

    applied = -1.0  # force the first event (target 0.0 is a no-op mask)
    perm = rng.permutation(n)
    pos = n  # trigger reshuffle on first use

    for step in range(config.steps):
        if schedule is not None:
            target = sparsity_at_step(schedule, step)
            if target > applied:
                _refresh_masks(model, config, target)
                applied = target

        if pos + batch > n:
            perm = rng.permutation(n)
            pos = 0
        idx = perm[pos : pos + batch]
        pos += batch

        lr = config.learning_rate
        if config.lr_decay_steps:
            lr *= config.lr_decay_factor ** (step // config.lr_decay_steps)

        loss, grads_w, grads_b = loss_and_gradients(
            model, x_all[idx], y_all[idx], config.weight_decay
        )
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        for i in range(len(model.weights)):
            model.weights[i] -= lr * grads_w[i]
            model.biases[i] -= lr * grads_b[i]
            model.weights[i] *= model.weight_masks[i]
            model.biases[i] *= model.bias_masks[i]

    if schedule is not None:
        target = sparsity_at_step(schedule, config.steps)
        if target > applied:
            _refresh_masks(model, config, target)

    if compression.is_quantization():
        scheme = QuantizationScheme(kind=_METHOD_TO_KIND[compression.method])
        calibration = None
        if scheme.kind == "fixed_int8":
            if scheme.representative_count > n:
                raise ConfigError(
                    "representative_count exceeds the training-set size"
                )
            calibration = x_all[: scheme.representative_count]
        model = quantize_model(model, scheme, calibration)
    return model


def _max_workers() -> int:
    raw = os.environ.get("COMPRESSLENS_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def evaluate_population(
    models: list[MLPModel],
    test_ds: LabeledDataset,
    compression: CompressionSpec,
    population_id: str,
    topk: int | None = None,
) -> PredictionLog:
    """Record each model's top-k ranked predictions on the test split."""
    if topk is None:
        topk = min(5, test_ds.num_classes)
    order = np.argsort(test_ds.example_ids, kind="stable")
    x = test_ds.feature_matrix[order]
    preds = np.stack([rank_topk(m.logits(x), topk) for m in models])
    return PredictionLog(
        population_id=population_id,
        compression=compression,
        example_ids=test_ds.example_ids[order],
        truth=test_ds.labels[order],
        predictions=preds,
        explicit_num_classes=test_ds.num_classes,
    )


def train_population(
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
    config: TrainConfig,
    compression: CompressionSpec = CompressionSpec("none"),
    schedule: PruneSchedule | None = None,
    population_id: str | None = None,
    topk: int | None = None,
) -> tuple[list[MLPModel], PredictionLog]:
    """Train K models from independent seeded inits and log them on the test split.

    Model k is seeded with config.seed + k. Models may train in parallel
    (capped by COMPRESSLENS_THREADS); results are assembled in model-id
    order, so parallelism never changes the output.
    """
    if compression.method == "magnitude_prune":
        if schedule is None:
            raise ConfigError("magnitude_prune requires a PruneSchedule")
        if schedule.target_sparsity != compression.sparsity:
            raise ConfigError(
                f"schedule target {schedule.target_sparsity} != "
                f"compression sparsity {compression.sparsity}"
            )
        if config.steps < schedule.prune_end:
            raise ConfigError("steps must be >= prune_end when pruning is active")
    elif schedule is not None:
        raise ConfigError("a PruneSchedule is only valid with magnitude_prune")
    if train_ds.dim != test_ds.dim or train_ds.num_classes != test_ds.num_classes:
        raise ConfigError("train/test splits disagree on dimensions or classes")
    missing = train_ds.missing_classes()
    if missing:
        raise ConfigError(f"training split is missing classes {missing}")

    seeds = [config.seed + k for k in range(config.population_size)]
    workers = _max_workers()
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            models = list(
                pool.map(
                    lambda s: _train_single(train_ds, config, compression, schedule, s),
                    seeds,
                )
            )
    else:
        models = [
            _train_single(train_ds, config, compression, schedule, s) for s in seeds
        ]

    pid = population_id if population_id is not None else compression.label
    log = evaluate_population(models, test_ds, compression, pid, topk)
    return models, log


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_model(model: MLPModel, compression: CompressionSpec, path: str | Path) -> None:
    doc = {
        "layer_dims": list(model.layer_dims),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "weight_masks": [m.astype(int).tolist() for m in model.weight_masks],
        "bias_masks": [m.astype(int).tolist() for m in model.bias_masks],
        "compression": {
            "method": compression.method,
            "sparsity": compression.sparsity,
        },
        "activation_ranges": (
            [list(r) for r in model.activation_ranges]
            if model.activation_ranges is not None
            else None
        ),
    }
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_model(path: str | Path) -> tuple[MLPModel, CompressionSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    model = MLPModel(
        weights=[np.array(w, dtype=np.float64) for w in doc["weights"]],
        biases=[np.array(b, dtype=np.float64) for b in doc["biases"]],
        weight_masks=[np.array(m, dtype=np.float64) for m in doc["weight_masks"]],
        bias_masks=[np.array(m, dtype=np.float64) for m in doc["bias_masks"]],
        activation_ranges=(
            [tuple(r) for r in doc["activation_ranges"]]
            if doc.get("activation_ranges")
            else None
        ),
    )
    spec = CompressionSpec(**doc["compression"])
    if tuple(doc["layer_dims"]) != model.layer_dims:
        raise ShapeError("layer_dims do not match the stored arrays")
    return model, spec
