"""Synthetic Zipf long-tail dataset generator used for desk-scale validation.

Classes are Gaussian clusters in feature space with example counts decaying
as (c+1)^-z. The most frequent half of the classes ("heads") sit far apart;
each remaining rare class is a smaller satellite cluster placed against a
head, on a difficulty ladder: the rarest classes are broader and closer to
the most frequent hosts, so they are the first to be cannibalized when model
capacity shrinks.

Three attribute flags feed the downstream PIE analyses:

- ``attr_minority``: the class's count is below the median class count.
- ``attr_noisy``: the recorded label is unreliable; the features are drawn
  between the recorded class's cluster and another cluster, modeling the
  confusable examples that attract wrong labels in real data.
- ``attr_atypical``: features drawn far off the cluster center.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import ExampleRecord, LabeledDataset, write_dataset
from .errors import ConfigError


@dataclass(frozen=True)
class SynthLongTailSpec:
    num_classes: int = 10
    dim: int = 16
    train_count: int = 5000
    test_count: int = 2000
    zipf_exponent: float = 1.0
    center_scale: float = 1.6
    cluster_spread: float = 0.9
    # satellite ladder, easiest (most frequent tail class) to hardest (rarest)
    tail_offset_easy: float = 2.0
    tail_offset_hard: float = 1.45
    tail_spread_easy: float = 0.28
    tail_spread_hard: float = 0.40
    noisy_fraction: float = 0.05
    noisy_gamma: tuple[float, float] = (0.4, 0.65)
    atypical_fraction: float = 0.08
    atypical_scale: float = 2.4
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError("need at least 2 classes")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.train_count < self.num_classes or self.test_count < self.num_classes:
            raise ConfigError("each split needs at least one example per class")
        if self.zipf_exponent < 0:
            raise ConfigError("zipf_exponent must be >= 0")
        for name in ("noisy_fraction", "atypical_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ConfigError(f"{name} must be in [0, 1)")
        if self.cluster_spread <= 0 or self.center_scale <= 0:
            raise ConfigError("spread and center scale must be positive")
        lo, hi = self.noisy_gamma
        if not 0.0 < lo <= hi < 1.0:
            raise ConfigError("noisy_gamma must satisfy 0 < lo <= hi < 1")


def zipf_allocate(total: int, num_classes: int, exponent: float) -> list[int]:
    """Integer class counts proportional to (c+1)^-exponent, summing to total.

    Largest-remainder rounding, ties to the lower class; every class gets at
    least one example.
    """
    weights = np.array([(c + 1.0) ** (-exponent) for c in range(num_classes)])
    ideal = total * weights / weights.sum()
    counts = np.floor(ideal).astype(int)
    remainder = total - int(counts.sum())
    order = sorted(range(num_classes), key=lambda c: (-(ideal[c] - counts[c]), c))
    for c in order[:remainder]:
        counts[c] += 1
    # tiny totals can starve the tail; steal from the head to keep support
    for c in range(num_classes):
        if counts[c] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[c] = 1
    return counts.tolist()


def _cluster_geometry(
    spec: SynthLongTailSpec, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Class centers and per-class spreads: separated heads, ladder of satellites."""
    n_head = (spec.num_classes + 1) // 2
    dirs = rng.standard_normal((n_head, spec.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    centers = np.zeros((spec.num_classes, spec.dim))
    spreads = np.zeros(spec.num_classes)
    centers[:n_head] = dirs * spec.center_scale * np.sqrt(spec.dim)
    spreads[:n_head] = spec.cluster_spread

    n_tail = spec.num_classes - n_head
    for j, c in enumerate(range(n_head, spec.num_classes)):
        # the rarest satellite rides the most frequent head and is the
        # broadest and closest-in: first to go when capacity drops
        host = (n_head - 1 - j) % n_head
        frac = j / max(1, n_tail - 1)
        offset = spec.tail_offset_easy + frac * (
            spec.tail_offset_hard - spec.tail_offset_easy
        )
        ratio = spec.tail_spread_easy + frac * (
            spec.tail_spread_hard - spec.tail_spread_easy
        )
        direction = rng.standard_normal(spec.dim)
        direction /= np.linalg.norm(direction)
        centers[c] = centers[host] + direction * offset * spec.cluster_spread
        spreads[c] = spec.cluster_spread * ratio
    return centers, spreads


def _sample_split(
    spec: SynthLongTailSpec,
    centers: np.ndarray,
    spreads: np.ndarray,
    total: int,
    rng: np.random.Generator,
    id_offset: int,
) -> LabeledDataset:
    counts = zipf_allocate(total, spec.num_classes, spec.zipf_exponent)
    median = float(np.median(counts))
    minority = {c for c in range(spec.num_classes) if counts[c] < median}
    g_lo, g_hi = spec.noisy_gamma

    records: list[tuple[int, np.ndarray, frozenset[str]]] = []
    for c in range(spec.num_classes):
        for _ in range(counts[c]):
            u = rng.random()
            flags = set()
            if c in minority:
                flags.add("minority")
            if u < spec.noisy_fraction:
                flags.add("noisy")
                other = int(rng.integers(spec.num_classes - 1))
                if other >= c:
                    other += 1
                gamma = rng.uniform(g_lo, g_hi)
                base = (1.0 - gamma) * centers[other] + gamma * centers[c]
                feats = base + spreads[c] * rng.standard_normal(spec.dim)
            elif u < spec.noisy_fraction + spec.atypical_fraction:
                flags.add("atypical")
                feats = centers[c] + (
                    spec.atypical_scale * spreads[c]
                ) * rng.standard_normal(spec.dim)
            else:
                feats = centers[c] + spreads[c] * rng.standard_normal(spec.dim)
            records.append((c, feats, frozenset(flags)))

    order = rng.permutation(len(records))
    examples = tuple(
        ExampleRecord(
            example_id=id_offset + i,
            features=records[j][1],
            true_label=records[j][0],
            attributes=records[j][2],
        )
        for i, j in enumerate(order)
    )
    return LabeledDataset(examples=examples, num_classes=spec.num_classes)


def synthesize(spec: SynthLongTailSpec) -> tuple[LabeledDataset, LabeledDataset]:
    """Deterministic (train, test) splits for a spec; same spec, same data."""
    rng = np.random.default_rng(spec.seed)
    centers, spreads = _cluster_geometry(spec, rng)
    train = _sample_split(spec, centers, spreads, spec.train_count, rng, id_offset=0)
    test = _sample_split(
        spec, centers, spreads, spec.test_count, rng, id_offset=spec.train_count
    )
    return train, test


def generate(spec: SynthLongTailSpec, out_dir: str | Path) -> tuple[Path, Path]:
    """Synthesize and write train.csv / test.csv (plus sidecars) into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test = synthesize(spec)
    train_path = out_dir / "train.csv"
    test_path = out_dir / "test.csv"
    write_dataset(train, train_path)
    write_dataset(test, test_path)
    return train_path, test_path
