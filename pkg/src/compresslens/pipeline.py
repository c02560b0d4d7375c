"""End-to-end experiment pipeline: generate/load data, train the sweep, audit, report.

The pipeline is idempotent given its seed: re-running the same config writes
byte-identical files. Reports carry no timestamps and all iteration orders
are fixed.
"""

from __future__ import annotations

import csv
import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .data_model import (
    AuditConfig,
    CompressionSpec,
    LabeledDataset,
    PredictionLog,
    atomic_write_text,
    model_accuracy,
    read_dataset,
    write_prediction_log,
)
from .errors import CompressLensError, ConfigError, ParseError, SchemaError
from .pie_audit import (
    identify_pies,
    subset_accuracy,
    write_attribute_report,
    write_pie_report,
)
from .stats_audit import AUDIT_HEADER, audit_classes, write_audit_csv
from .synth import SynthLongTailSpec, synthesize
from .trainer import PruneSchedule, TrainConfig, train_population

# seed stride between populations so no two share model seeds
_POPULATION_SEED_STRIDE = 100_000


@contextmanager
def _stage(name: str):
    """Re-raise toolkit errors with the failing pipeline stage named."""
    try:
        yield
    except CompressLensError as exc:
        raise type(exc)(f"[stage: {name}] {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    # the defaults are the calibrated desk-scale experiment: excluding biases
    # from pruning keeps the learned Zipf class priors intact at high sparsity
    train: TrainConfig = field(default_factory=lambda: TrainConfig(prune_biases=False))
    sweep: tuple[CompressionSpec, ...] = (
        CompressionSpec("none"),
        CompressionSpec("magnitude_prune", 0.3),
        CompressionSpec("magnitude_prune", 0.5),
        CompressionSpec("magnitude_prune", 0.7),
        CompressionSpec("magnitude_prune", 0.9),
    )
    audit: AuditConfig = AuditConfig()
    seed: int = 3
    out_dir: str = "compresslens-run"
    dataset_path: str | None = None  # directory holding train.csv / test.csv
    synth: SynthLongTailSpec = field(default_factory=SynthLongTailSpec)
    prune_start: int = 250
    prune_end: int = 1750
    prune_every: int = 100
    topk: int | None = None

    def __post_init__(self):
        baselines = [s for s in self.sweep if s.method == "none"]
        if len(baselines) != 1:
            raise ConfigError(
                f"sweep must include exactly one 'none' baseline, got {len(baselines)}"
            )


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Parse the JSON config documented in the README."""
    with open(path) as fh:
        doc = json.load(fh)
    kwargs: dict = {}
    if "train" in doc:
        train = dict(doc["train"])
        if "hidden_dims" in train:
            train["hidden_dims"] = tuple(train["hidden_dims"])
        kwargs["train"] = TrainConfig(**train)
    if "sweep" in doc:
        kwargs["sweep"] = tuple(
            CompressionSpec(
                method=entry["method"], sparsity=float(entry.get("sparsity", 0.0))
            )
            for entry in doc["sweep"]
        )
    if "audit" in doc:
        kwargs["audit"] = AuditConfig(**doc["audit"])
    if "dataset" in doc:
        ds = doc["dataset"]
        if "path" in ds:
            kwargs["dataset_path"] = ds["path"]
        elif "synth" in ds:
            kwargs["synth"] = SynthLongTailSpec(**ds["synth"])
        else:
            raise ConfigError("dataset must carry 'path' or 'synth'")
    if "prune" in doc:
        p = doc["prune"]
        kwargs["prune_start"] = int(p.get("start", 200))
        kwargs["prune_end"] = int(p.get("end", 1400))
        kwargs["prune_every"] = int(p.get("every", 100))
    for key in ("seed", "out_dir", "topk"):
        if key in doc:
            kwargs[key] = doc[key]
    return ExperimentConfig(**kwargs)


def _resolve_dataset(config: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    if config.dataset_path is not None:
        root = Path(config.dataset_path)
        return read_dataset(root / "train.csv"), read_dataset(root / "test.csv")
    return synthesize(config.synth)


def _schedule_for(config: ExperimentConfig, spec: CompressionSpec) -> PruneSchedule | None:
    if spec.method != "magnitude_prune":
        return None
    return PruneSchedule(
        target_sparsity=spec.sparsity,
        prune_start=config.prune_start,
        prune_end=config.prune_end,
        prune_every=config.prune_every,
    )


@dataclass(frozen=True)
class PipelineResult:
    out_dir: Path
    summary: dict
    log_paths: dict[str, Path]


def run_pipeline(config: ExperimentConfig) -> PipelineResult:
    """Run the full protocol: train the sweep, audit each level, write the bundle."""
    out = Path(config.out_dir)
    (out / "logs").mkdir(parents=True, exist_ok=True)
    (out / "audits").mkdir(exist_ok=True)
    (out / "pies").mkdir(exist_ok=True)

    with _stage("dataset"):
        train_ds, test_ds = _resolve_dataset(config)

    baseline_spec = next(s for s in config.sweep if s.method == "none")
    comp_specs = [s for s in config.sweep if s.method != "none"]

    log_paths: dict[str, Path] = {}
    logs: dict[str, PredictionLog] = {}

    def _train(spec: CompressionSpec, seed: int) -> PredictionLog:
        cfg = TrainConfig(
            steps=config.train.steps,
            batch_size=config.train.batch_size,
            learning_rate=config.train.learning_rate,
            lr_decay_steps=config.train.lr_decay_steps,
            lr_decay_factor=config.train.lr_decay_factor,
            weight_decay=config.train.weight_decay,
            seed=seed,
            population_size=config.train.population_size,
            hidden_dims=config.train.hidden_dims,
            prune_biases=config.train.prune_biases,
            prune_final_layer=config.train.prune_final_layer,
        )
        with _stage(f"train {spec.label}"):
            _, log = train_population(
                train_ds,
                test_ds,
                cfg,
                spec,
                schedule=_schedule_for(config, spec),
                topk=config.topk,
            )
            path = out / "logs" / f"{spec.label}.csv"
            write_prediction_log(log, path)
        log_paths[spec.label] = path
        logs[spec.label] = log
        return log

    base_log = _train(baseline_spec, config.seed)
    for i, spec in enumerate(comp_specs):
        _train(spec, config.seed + _POPULATION_SEED_STRIDE * (i + 1))

    eval_k = config.audit.topk_eval
    eval_k = min(eval_k, base_log.topk)

    def _population_entry(log: PredictionLog) -> dict:
        return {
            "top1": round(100.0 * float(model_accuracy(log, 1).mean()), 4),
            f"top{eval_k}": round(100.0 * float(model_accuracy(log, eval_k).mean()), 4),
        }

    levels = []
    has_attrs = bool(test_ds.attribute_names)
    for spec in comp_specs:
        comp_log = logs[spec.label]
        entry: dict = {
            "label": spec.label,
            "method": spec.method,
            "sparsity": spec.sparsity,
        }
        entry.update(_population_entry(comp_log))
        with _stage(f"audit {spec.label}"):
            if comp_log.num_models >= 2 and base_log.num_models >= 2:
                rows = audit_classes(base_log, comp_log, config.audit)
                write_audit_csv(rows, out / "audits" / f"class_audit_{spec.label}.csv")
                entry["significant_classes"] = sum(r.significant for r in rows)
            else:
                entry["significant_classes"] = 0
            pies = identify_pies(base_log, comp_log)
            truth = {
                int(e): int(t) for e, t in zip(base_log.example_ids, base_log.truth)
            }
            write_pie_report(pies, truth, out / "pies" / f"pie_{spec.label}.csv")
            entry["pie_count"] = len(pies)
            if pies.pie_ids:
                acc_pie, acc_non, acc_all = subset_accuracy(base_log, pies, 1)
                entry["baseline_top1_on_pies"] = round(100.0 * acc_pie, 4)
                entry["baseline_top1_on_non_pies"] = round(100.0 * acc_non, 4)
                entry["baseline_top1_on_all"] = round(100.0 * acc_all, 4)
                if has_attrs:
                    write_attribute_report(
                        pies, test_ds, out / "pies" / f"attr_{spec.label}.csv"
                    )
        levels.append(entry)

    summary = {
        "seed": config.seed,
        "num_classes": test_ds.num_classes,
        "num_models": config.train.population_size,
        "baseline": _population_entry(base_log),
        "levels": levels,
        "total_significant_classes": sum(e["significant_classes"] for e in levels),
        "total_pies": sum(e["pie_count"] for e in levels),
    }
    atomic_write_text(
        out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return PipelineResult(out_dir=out, summary=summary, log_paths=log_paths)


# ---------------------------------------------------------------------------
# report merging
# ---------------------------------------------------------------------------

def _read_audit_rows(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if header != AUDIT_HEADER:
            raise SchemaError(f"{path}: unexpected audit header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields", lineno)
            try:
                rows.append(
                    {
                        "class": int(row[0]),
                        "mean_recall_base": float(row[1]),
                        "mean_recall_comp": float(row[2]),
                        "norm_recall_diff": float(row[3]),
                        "t_stat": float(row[4]),
                        "df": float(row[5]),
                        "p_value": float(row[6]),
                        "significant": row[7] == "1",
                    }
                )
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    return rows


def _read_pie_counts(path: str | Path) -> tuple[int, int]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return 0, 0
        total = pies = 0
        for row in reader:
            if not row:
                continue
            total += 1
            if row[-1] == "1":
                pies += 1
    return pies, total


def write_report(
    audit_csv: str | Path,
    out_dir: str | Path,
    pie_csv: str | Path | None = None,
    chart: bool = False,
) -> dict:
    """Merge audit (and optional PIE) CSVs into a text table plus machine JSON.

    When `chart` is set, a per-class bar-chart data file is also written
    (class, normalized recall difference, significance flag).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_audit_rows(audit_csv)
    rows.sort(key=lambda r: (r["norm_recall_diff"], r["class"]))

    lines = [
        f"{'class':>6} {'recall_base':>12} {'recall_comp':>12} "
        f"{'norm_diff':>10} {'p_value':>10} {'signif':>6}"
    ]
    for r in rows:
        lines.append(
            f"{r['class']:>6} {r['mean_recall_base']:>12.4f} "
            f"{r['mean_recall_comp']:>12.4f} {r['norm_recall_diff']:>10.4f} "
            f"{r['p_value']:>10.6f} {'yes' if r['significant'] else 'no':>6}"
        )
    n_signif = sum(r["significant"] for r in rows)
    lines.append("")
    lines.append(f"classes: {len(rows)}  significant: {n_signif}")

    doc: dict = {
        "classes": len(rows),
        "significant_classes": n_signif,
        "rows": rows,
    }
    if pie_csv is not None:
        pies, total = _read_pie_counts(pie_csv)
        doc["pie_count"] = pies
        doc["examples"] = total
        lines.append(f"pies: {pies} / {total}")
    atomic_write_text(out_dir / "report.txt", "\n".join(lines) + "\n")
    atomic_write_text(
        out_dir / "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    if chart:
        chart_lines = ["class,norm_recall_diff,significant"]
        for r in rows:
            chart_lines.append(
                f"{r['class']},{r['norm_recall_diff']:.6f},"
                f"{1 if r['significant'] else 0}"
            )
        atomic_write_text(out_dir / "chart.csv", "\n".join(chart_lines) + "\n")
    return doc
