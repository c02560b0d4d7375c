"""Core domain types, file formats, and the accuracy primitives every audit consumes.

A `PredictionLog` holds the ranked predictions of every model in a population
on every example of a split; all audits are derived from logs. Types are
immutable after construction and every operation here is a pure function, so
everything is safe to share across threads.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    MissingClassSupport,
    ParseError,
    RankDepthExceeded,
    SchemaError,
)

COMPRESSION_METHODS = (
    "none",
    "magnitude_prune",
    "quant_float16",
    "quant_dynamic_int8",
    "quant_fixed_int8",
)

QUANT_METHODS = ("quant_float16", "quant_dynamic_int8", "quant_fixed_int8")

# short names used in file stems and report labels
_METHOD_LABELS = {
    "none": "baseline",
    "quant_float16": "float16",
    "quant_dynamic_int8": "dynamic_int8",
    "quant_fixed_int8": "fixed_int8",
}


@dataclass(frozen=True)
class CompressionSpec:
    """Which compression was applied to a model population.

    `sparsity` is the target fraction of weights set to zero; it is required
    (and must be positive) for magnitude pruning and must be 0 for every
    other method.
    """

    method: str
    sparsity: float = 0.0

    def __post_init__(self):
        if self.method not in COMPRESSION_METHODS:
            raise ConfigError(f"unknown compression method {self.method!r}")
        if self.method == "magnitude_prune":
            if not (0.0 < self.sparsity < 1.0):
                raise ConfigError(
                    "magnitude_prune requires sparsity in (0, 1), "
                    f"got {self.sparsity}"
                )
        elif self.sparsity != 0.0:
            raise ConfigError(f"method {self.method!r} carries no sparsity")

    @property
    def label(self) -> str:
        if self.method == "magnitude_prune":
            return f"prune_{self.sparsity:g}"
        return _METHOD_LABELS[self.method]

    def is_quantization(self) -> bool:
        return self.method in QUANT_METHODS


@dataclass(frozen=True, eq=False)
class ExampleRecord:
    """One example: an id, a feature vector, a label, optional boolean attributes.

    `layout` is an optional (height, width) pair for image-like feature
    vectors; height * width must equal the feature length when present.
    """

    example_id: int
    features: np.ndarray
    true_label: int
    attributes: frozenset[str] = frozenset()
    layout: tuple[int, int] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.example_id < 0:
            raise ConfigError(f"example_id must be non-negative, got {self.example_id}")
        if feats.ndim != 1:
            raise ConfigError("features must be a 1D vector")
        if self.layout is not None:
            h, w = self.layout
            if h * w != feats.size:
                raise ConfigError(
                    f"layout {h}x{w} does not match feature length {feats.size}"
                )


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """An ordered collection of examples with a fixed class count."""

    examples: tuple[ExampleRecord, ...]
    num_classes: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))
        if self.num_classes < 1:
            raise ConfigError("num_classes must be positive")
        ids = [ex.example_id for ex in self.examples]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate example_ids in dataset")
        dims = {ex.features.size for ex in self.examples}
        if len(dims) > 1:
            raise ConfigError(f"inconsistent feature lengths: {sorted(dims)}")
        for ex in self.examples:
            if not 0 <= ex.true_label < self.num_classes:
                raise ConfigError(
                    f"example {ex.example_id}: label {ex.true_label} "
                    f"outside [0, {self.num_classes})"
                )
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ConfigError("class_names length must equal num_classes")

    def __len__(self) -> int:
        return len(self.examples)

    @cached_property
    def dim(self) -> int:
        return self.examples[0].features.size if self.examples else 0

    @cached_property
    def feature_matrix(self) -> np.ndarray:
        mat = np.stack([ex.features for ex in self.examples]) if self.examples else (
            np.zeros((0, 0))
        )
        mat.flags.writeable = False
        return mat

    @cached_property
    def labels(self) -> np.ndarray:
        arr = np.array([ex.true_label for ex in self.examples], dtype=np.int64)
        arr.flags.writeable = False
        return arr

    @cached_property
    def example_ids(self) -> np.ndarray:
        arr = np.array([ex.example_id for ex in self.examples], dtype=np.int64)
        arr.flags.writeable = False
        return arr

    @cached_property
    def attribute_names(self) -> tuple[str, ...]:
        names: set[str] = set()
        for ex in self.examples:
            names.update(ex.attributes)
        return tuple(sorted(names))

    def attribute_mask(self, name: str) -> np.ndarray:
        return np.array([name in ex.attributes for ex in self.examples], dtype=bool)

    def missing_classes(self) -> list[int]:
        """Classes in {0..C-1} with no examples; reportable validation rule."""
        present = set(int(x) for x in self.labels)
        return [c for c in range(self.num_classes) if c not in present]


@dataclass(frozen=True)
class AuditConfig:
    """Knobs for the statistical audits."""

    alpha: float = 0.05
    topk_eval: int = 5
    bonferroni: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.topk_eval < 1:
            raise ConfigError("topk_eval must be >= 1")


@dataclass(frozen=True, eq=False)
class PredictionLog:
    """Ranked predictions of every model in one population on one split.

    `predictions[k, i]` is the ordered top-k label list of model k on the
    example at `example_ids[i]`; ids are kept sorted so logs built from the
    same split align positionally.
    """

    population_id: str
    compression: CompressionSpec
    example_ids: np.ndarray  # (N,) int64, strictly increasing
    truth: np.ndarray  # (N,) int64
    predictions: np.ndarray  # (K, N, topk) int64
    explicit_num_classes: int | None = None

    def __post_init__(self):
        ids = np.asarray(self.example_ids, dtype=np.int64)
        truth = np.asarray(self.truth, dtype=np.int64)
        preds = np.asarray(self.predictions, dtype=np.int64)
        if preds.ndim != 3:
            raise ConfigError("predictions must have shape (K, N, topk)")
        if ids.shape != (preds.shape[1],) or truth.shape != ids.shape:
            raise ConfigError("example_ids/truth must align with predictions")
        if ids.size:
            if np.any(np.diff(ids) <= 0):
                order = np.argsort(ids, kind="stable")
                ids = ids[order]
                truth = truth[order]
                preds = preds[:, order, :]
            if np.any(np.diff(ids) == 0):
                raise ConfigError("duplicate example_ids in log")
        if preds.shape[0] < 1 or preds.shape[2] < 1:
            raise ConfigError("log needs K >= 1 models and topk >= 1")
        # ranked labels must be distinct per (model, example)
        if preds.shape[2] > 1:
            sorted_ranks = np.sort(preds, axis=2)
            if np.any(np.diff(sorted_ranks, axis=2) == 0):
                raise ConfigError("ranked labels must be distinct per (model, example)")
        for arr in (ids, truth, preds):
            arr.flags.writeable = False
        object.__setattr__(self, "example_ids", ids)
        object.__setattr__(self, "truth", truth)
        object.__setattr__(self, "predictions", preds)
        if self.topk > self.num_classes:
            raise ConfigError(
                f"topk {self.topk} exceeds class count {self.num_classes}"
            )

    @property
    def num_models(self) -> int:
        return self.predictions.shape[0]

    @property
    def num_examples(self) -> int:
        return self.predictions.shape[1]

    @property
    def topk(self) -> int:
        return self.predictions.shape[2]

    @cached_property
    def num_classes(self) -> int:
        if self.explicit_num_classes is not None:
            return self.explicit_num_classes
        hi = int(self.predictions.max()) if self.predictions.size else -1
        if self.truth.size:
            hi = max(hi, int(self.truth.max()))
        return hi + 1

    def same_example_set(self, other: "PredictionLog") -> bool:
        return np.array_equal(self.example_ids, other.example_ids)


def class_recall_matrix(log: PredictionLog) -> dict[int, np.ndarray]:
    """Per-class rank-1 recall samples across the population.

    Returns, for each class c in {0..C-1}, the length-K vector whose k-th
    entry is the fraction of class-c examples that model k predicts as c at
    rank 1.

    Raises:
        MissingClassSupport: some class has no examples in the truth map.
    """
    C = log.num_classes
    support = np.bincount(log.truth, minlength=C)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        raise MissingClassSupport(
            f"classes with zero test support: {empty.tolist()}"
        )
    rank1 = log.predictions[:, :, 0]  # (K, N)
    correct = rank1 == log.truth[np.newaxis, :]
    out: dict[int, np.ndarray] = {}
    for c in range(C):
        members = log.truth == c
        recalls = correct[:, members].mean(axis=1)
        recalls.flags.writeable = False
        out[c] = recalls
    return out


def model_accuracy(log: PredictionLog, k: int = 1) -> np.ndarray:
    """Per-model top-k accuracy: the true label appears within the first k ranks.

    Raises:
        RankDepthExceeded: k exceeds the log's ranking depth.
    """
    if k < 1:
        raise RankDepthExceeded(f"rank depth must be >= 1, got {k}")
    if k > log.topk:
        raise RankDepthExceeded(f"rank depth {k} exceeds log depth {log.topk}")
    hits = log.predictions[:, :, :k] == log.truth[np.newaxis, :, np.newaxis]
    return hits.any(axis=2).mean(axis=1)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

LOG_HEADER = [
    "population_id",
    "compression_method",
    "sparsity",
    "model_id",
    "example_id",
    "rank",
    "predicted_label",
    "true_label",
]


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write through a temporary file renamed into place (single writer per path)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_prediction_log(log: PredictionLog, path: str | Path) -> None:
    """Serialize a log as long-format CSV, rows ordered by (model, example, rank)."""
    lines = [",".join(LOG_HEADER)]
    method = log.compression.method
    sparsity = repr(log.compression.sparsity)
    pid = log.population_id
    for k in range(log.num_models):
        for i in range(log.num_examples):
            eid = log.example_ids[i]
            truth = log.truth[i]
            for r in range(log.topk):
                lines.append(
                    f"{pid},{method},{sparsity},{k},{eid},{r + 1},"
                    f"{log.predictions[k, i, r]},{truth}"
                )
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_prediction_log(path: str | Path) -> PredictionLog:
    """Parse a long-format CSV log; the inverse of `write_prediction_log`.

    Rows may appear in any order. Raises SchemaError for a bad header and
    ParseError (with a 1-based line number) for a bad row.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header != LOG_HEADER:
            missing = [c for c in LOG_HEADER if c not in header]
            extra = [c for c in header if c not in LOG_HEADER]
            detail = []
            if missing:
                detail.append(f"missing columns {missing}")
            if extra:
                detail.append(f"unexpected columns {extra}")
            raise SchemaError(f"{path}: {'; '.join(detail) or 'columns out of order'}")

        pid: str | None = None
        method: str | None = None
        sparsity: float | None = None
        cells: dict[tuple[int, int, int], int] = {}
        truth: dict[int, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(LOG_HEADER):
                raise ParseError(f"expected {len(LOG_HEADER)} fields, got {len(row)}", lineno)
            try:
                model_id = int(row[3])
                example_id = int(row[4])
                rank = int(row[5])
                pred = int(row[6])
                true_label = int(row[7])
                row_sparsity = float(row[2])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if pid is None:
                pid, method, sparsity = row[0], row[1], row_sparsity
            elif (row[0], row[1], row_sparsity) != (pid, method, sparsity):
                raise ParseError("mixed populations in one log file", lineno)
            if rank < 1:
                raise ParseError(f"ranks are 1-based, got {rank}", lineno)
            key = (model_id, example_id, rank)
            if key in cells:
                raise ParseError(f"duplicate (model_id, example_id, rank) {key}", lineno)
            cells[key] = pred
            prev = truth.setdefault(example_id, true_label)
            if prev != true_label:
                raise ParseError(
                    f"conflicting true_label for example {example_id}", lineno
                )

    if not cells:
        raise ParseError("log contains no data rows", None)
    model_ids = sorted({k[0] for k in cells})
    example_ids = sorted({k[1] for k in cells})
    ranks = sorted({k[2] for k in cells})
    K, N, topk = len(model_ids), len(example_ids), len(ranks)
    if model_ids != list(range(K)):
        raise ParseError(f"model ids must be 0..K-1, got {model_ids}", None)
    if ranks != list(range(1, topk + 1)):
        raise ParseError(f"ranks must be contiguous from 1, got {ranks}", None)
    if len(cells) != K * N * topk:
        raise ParseError(
            f"incomplete log: expected {K * N * topk} rows, got {len(cells)}", None
        )
    preds = np.empty((K, N, topk), dtype=np.int64)
    eid_index = {eid: i for i, eid in enumerate(example_ids)}
    for (model_id, example_id, rank), pred in cells.items():
        preds[model_id, eid_index[example_id], rank - 1] = pred
    truth_arr = np.array([truth[eid] for eid in example_ids], dtype=np.int64)
    assert method is not None and sparsity is not None and pid is not None
    return PredictionLog(
        population_id=pid,
        compression=CompressionSpec(method=method, sparsity=sparsity),
        example_ids=np.array(example_ids, dtype=np.int64),
        truth=truth_arr,
        predictions=preds,
    )


def write_dataset(dataset: LabeledDataset, csv_path: str | Path) -> None:
    """Write a dataset CSV plus its `<stem>.meta.json` sidecar."""
    csv_path = Path(csv_path)
    attrs = dataset.attribute_names
    dim = dataset.dim
    header = ["example_id", "true_label"]
    header += [f"attr_{a}" for a in attrs]
    header += [f"f{j}" for j in range(dim)]
    lines = [",".join(header)]
    for ex in dataset.examples:
        row = [str(ex.example_id), str(ex.true_label)]
        row += ["1" if a in ex.attributes else "0" for a in attrs]
        row += [repr(float(v)) for v in ex.features]
        lines.append(",".join(row))
    atomic_write_text(csv_path, "\n".join(lines) + "\n")

    meta: dict[str, object] = {"num_classes": dataset.num_classes}
    layout = dataset.examples[0].layout if dataset.examples else None
    if layout is not None:
        meta["height"], meta["width"] = layout
    if dataset.class_names is not None:
        meta["class_names"] = list(dataset.class_names)
    atomic_write_text(_meta_path(csv_path), json.dumps(meta, sort_keys=True) + "\n")


def read_dataset(csv_path: str | Path) -> LabeledDataset:
    """Read a dataset CSV and its sidecar metadata."""
    csv_path = Path(csv_path)
    meta_path = _meta_path(csv_path)
    if not meta_path.exists():
        raise SchemaError(f"missing sidecar metadata {meta_path}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    num_classes = int(meta["num_classes"])
    layout = None
    if "height" in meta and "width" in meta:
        layout = (int(meta["height"]), int(meta["width"]))
    class_names = tuple(meta["class_names"]) if "class_names" in meta else None

    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{csv_path}: empty file") from None
        if header[:2] != ["example_id", "true_label"]:
            raise SchemaError(
                f"{csv_path}: header must start with example_id,true_label"
            )
        attr_names = []
        col = 2
        while col < len(header) and header[col].startswith("attr_"):
            attr_names.append(header[col][len("attr_"):])
            col += 1
        feat_cols = header[col:]
        expected = [f"f{j}" for j in range(len(feat_cols))]
        if feat_cols != expected:
            raise SchemaError(f"{csv_path}: feature columns must be f0..f{{d-1}}")

        examples = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", lineno
                )
            try:
                eid = int(row[0])
                label = int(row[1])
                flags = frozenset(
                    name
                    for name, cell in zip(attr_names, row[2:col])
                    if cell == "1"
                )
                feats = np.array([float(v) for v in row[col:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            examples.append(
                ExampleRecord(
                    example_id=eid,
                    features=feats,
                    true_label=label,
                    attributes=flags,
                    layout=layout,
                )
            )
    return LabeledDataset(
        examples=tuple(examples), num_classes=num_classes, class_names=class_names
    )


def _meta_path(csv_path: Path) -> Path:
    return csv_path.with_suffix(".meta.json")
