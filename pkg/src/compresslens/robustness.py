"""Feature-space corruptions at five severities and relative-degradation metrics.

Accuracy of a compressed population on a corruption is normalized by the
baseline population's accuracy on the same corruption, averaging over
severities 1..5 first. A normalized value of 0 means compression added no
sensitivity to that corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_model import CompressionSpec, ExampleRecord, LabeledDataset, atomic_write_text
from .errors import ConfigError, LayoutRequired, ZeroBaseline
from .trainer import MLPModel

CORRUPTION_KINDS = (
    "gaussian_noise",
    "shot_noise",
    "impulse_noise",
    "brightness",
    "contrast",
    "pixelate",
)

# per-severity parameter tables (index 0 = severity 1)
_GAUSSIAN_SIGMA = (0.04, 0.08, 0.12, 0.18, 0.26)  # fraction of feature range
_SHOT_LAMBDA = (500.0, 250.0, 100.0, 50.0, 25.0)
_IMPULSE_FRACTION = (0.01, 0.02, 0.05, 0.10, 0.17)
_BRIGHTNESS_SHIFT = (0.05, 0.10, 0.15, 0.22, 0.30)  # fraction of feature range
_CONTRAST_SCALE = (0.75, 0.6, 0.45, 0.3, 0.15)
_PIXELATE_BLOCK = (2, 3, 4, 6, 8)

_KIND_INDEX = {k: i for i, k in enumerate(CORRUPTION_KINDS)}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigError(f"unknown corruption kind {self.kind!r}")
        if not 1 <= self.severity <= 5:
            raise ConfigError(f"severity must be in 1..5, got {self.severity}")


@dataclass(frozen=True)
class RobustnessRow:
    kind: str
    sparsity: float
    top1_abs: float  # percent
    topk_abs: float
    top1_norm: float  # percent relative change vs baseline
    topk_norm: float


def _example_rng(spec: CorruptionSpec, example_id: int) -> np.random.Generator:
    return np.random.default_rng(
        [spec.seed, _KIND_INDEX[spec.kind], spec.severity, example_id]
    )


def corrupt_features(
    features: np.ndarray,
    spec: CorruptionSpec,
    example_id: int,
    lo=0.0,
    hi=1.0,
    layout: tuple[int, int] | None = None,
) -> np.ndarray:
    """Apply one corruption to a feature vector; pure given (features, spec, id).

    `lo`/`hi` bound the feature domain (scalars or per-coordinate arrays);
    severity magnitudes are expressed as fractions of hi - lo, and the
    result is clamped back into [lo, hi].
    """
    x = np.asarray(features, dtype=np.float64).copy()
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), x.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), x.shape)
    span = hi - lo
    s = spec.severity - 1

    if spec.kind == "gaussian_noise":
        rng = _example_rng(spec, example_id)
        x = x + rng.normal(0.0, 1.0, x.shape) * (_GAUSSIAN_SIGMA[s] * span)
    elif spec.kind == "shot_noise":
        rng = _example_rng(spec, example_id)
        lam = _SHOT_LAMBDA[s]
        rate = np.maximum(x - lo, 0.0) * lam
        x = lo + rng.poisson(rate) / lam
    elif spec.kind == "impulse_noise":
        rng = _example_rng(spec, example_id)
        hit = rng.random(x.shape) < _IMPULSE_FRACTION[s]
        extreme_high = rng.random(x.shape) < 0.5
        x = np.where(hit, np.where(extreme_high, hi, lo), x)
    elif spec.kind == "brightness":
        x = x + _BRIGHTNESS_SHIFT[s] * span
    elif spec.kind == "contrast":
        mean = x.mean()
        x = mean + (x - mean) * _CONTRAST_SCALE[s]
    elif spec.kind == "pixelate":
        if layout is None:
            raise LayoutRequired("pixelate requires a height x width layout")
        h, w = layout
        block = _PIXELATE_BLOCK[s]
        img = x.reshape(h, w)
        out = np.empty_like(img)
        for r0 in range(0, h, block):
            for c0 in range(0, w, block):
                patch = img[r0 : r0 + block, c0 : c0 + block]
                out[r0 : r0 + block, c0 : c0 + block] = patch.mean()
        x = out.ravel()

    return np.clip(x, lo, hi)


def corrupt(example: ExampleRecord, spec: CorruptionSpec, lo=0.0, hi=1.0) -> ExampleRecord:
    """Corrupted copy of an example; deterministic given (example, spec)."""
    if not np.all(np.isfinite(example.features)):
        raise ConfigError("features must be finite")
    feats = corrupt_features(
        example.features, spec, example.example_id, lo, hi, example.layout
    )
    return ExampleRecord(
        example_id=example.example_id,
        features=feats,
        true_label=example.true_label,
        attributes=example.attributes,
        layout=example.layout,
    )


def relative_accuracy(acc_comp: float, acc_base: float) -> float:
    """Signed percent change of compressed accuracy relative to the baseline."""
    if acc_base <= 0:
        raise ZeroBaseline(f"baseline accuracy must be positive, got {acc_base}")
    return 100.0 * (acc_comp - acc_base) / acc_base


def _dataset_bounds(dataset: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    mat = dataset.feature_matrix
    return mat.min(axis=0), mat.max(axis=0)


def _topk_hit_rates(
    models: list[MLPModel], x: np.ndarray, y: np.ndarray, k: int
) -> tuple[float, float]:
    """(top-1, top-k) accuracy averaged over models, tie-break as in predict_topk."""
    top1 = []
    topk = []
    labels = None
    for m in models:
        logits = m.logits(x)
        if labels is None:
            labels = np.arange(logits.shape[1])
        true_logit = logits[np.arange(len(y)), y]
        beats = (logits > true_logit[:, None]).sum(axis=1)
        beats += ((logits == true_logit[:, None]) & (labels[None, :] < y[:, None])).sum(
            axis=1
        )
        top1.append(float((beats < 1).mean()))
        topk.append(float((beats < k).mean()))
    return float(np.mean(top1)), float(np.mean(topk))


def robustness_report(
    test_ds: LabeledDataset,
    kinds: list[str],
    base_models: list[MLPModel],
    comp_models: list[MLPModel],
    comp_spec: CompressionSpec,
    topk: int | None = None,
    seed: int = 0,
) -> list[RobustnessRow]:
    """One row per corruption kind: absolute and baseline-normalized accuracy.

    Per kind, accuracy is the mean over severities 1..5 and over models;
    normalization divides by the baseline population's mean accuracy on the
    same corruption.
    """
    if topk is None:
        topk = min(5, test_ds.num_classes)
    lo, hi = _dataset_bounds(test_ds)
    order = np.argsort(test_ds.example_ids, kind="stable")
    feats = test_ds.feature_matrix[order]
    y = test_ds.labels[order]
    ids = test_ds.example_ids[order]
    layout = test_ds.examples[0].layout if test_ds.examples else None

    rows = []
    for kind in kinds:
        base1 = basek = comp1 = compk = 0.0
        for severity in range(1, 6):
            spec = CorruptionSpec(kind=kind, severity=severity, seed=seed)
            xc = np.stack(
                [
                    corrupt_features(feats[i], spec, int(ids[i]), lo, hi, layout)
                    for i in range(feats.shape[0])
                ]
            )
            b1, bk = _topk_hit_rates(base_models, xc, y, topk)
            c1, ck = _topk_hit_rates(comp_models, xc, y, topk)
            base1 += b1 / 5.0
            basek += bk / 5.0
            comp1 += c1 / 5.0
            compk += ck / 5.0
        rows.append(
            RobustnessRow(
                kind=kind,
                sparsity=comp_spec.sparsity,
                top1_abs=100.0 * comp1,
                topk_abs=100.0 * compk,
                top1_norm=relative_accuracy(100.0 * comp1, 100.0 * base1),
                topk_norm=relative_accuracy(100.0 * compk, 100.0 * basek),
            )
        )
    return rows


ROBUSTNESS_HEADER = ["corruption", "sparsity", "top1_abs", "topk_abs", "top1_norm", "topk_norm"]


def write_robustness_report(rows: list[RobustnessRow], path) -> None:
    lines = [",".join(ROBUSTNESS_HEADER)]
    for r in rows:
        lines.append(
            f"{r.kind},{r.sparsity:g},{r.top1_abs:.2f},{r.topk_abs:.2f},"
            f"{r.top1_norm:.2f},{r.topk_norm:.2f}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
