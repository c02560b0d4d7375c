"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Every flag overrides its config-file counterpart.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .data_model import (
    AuditConfig,
    CompressionSpec,
    atomic_write_text,
    read_dataset,
    read_prediction_log,
    write_prediction_log,
)
from .errors import CompressLensError, ConfigError, DataError, NumericError
from .pie_audit import (
    attribute_relative_representation,
    identify_pies,
    subset_accuracy,
    write_attribute_report,
    write_pie_report,
)
from .pipeline import (
    ExperimentConfig,
    load_experiment_config,
    run_pipeline,
    write_report,
)
from .robustness import CORRUPTION_KINDS, robustness_report, write_robustness_report
from .stats_audit import audit_classes, write_audit_csv
from .synth import SynthLongTailSpec, generate
from .trainer import (
    PruneSchedule,
    TrainConfig,
    load_model,
    save_model,
    train_population,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_QUANT_FLAGS = {
    "float16": "quant_float16",
    "dynamic_int8": "quant_dynamic_int8",
    "fixed_int8": "quant_fixed_int8",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="compresslens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="synthesize a Zipf long-tail dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--train-count", type=int, default=5000)
    p.add_argument("--test-count", type=int, default=2000)
    p.add_argument("--zipf", type=float, default=1.0)
    p.add_argument("--noisy", type=float, default=0.05)
    p.add_argument("--atypical", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train one model population and log predictions")
    p.add_argument("--data", required=True, help="dataset directory (train.csv/test.csv)")
    p.add_argument("--out", required=True, help="prediction-log CSV path")
    p.add_argument("--models", type=int, default=10, help="population size K")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--hidden", type=int, nargs="+", default=[128])
    p.add_argument("--sparsity", type=float, default=None, help="magnitude pruning target")
    p.add_argument("--quant", choices=sorted(_QUANT_FLAGS), default=None)
    p.add_argument("--prune-start", type=int, default=None)
    p.add_argument("--prune-end", type=int, default=None)
    p.add_argument("--prune-every", type=int, default=None)
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--save-models", default=None, help="directory for model snapshots")

    p = sub.add_parser("audit-classes", help="per-class Welch significance audit")
    p.add_argument("--base", required=True, help="baseline prediction log")
    p.add_argument("--comp", required=True, help="compressed prediction log")
    p.add_argument("--out", required=True, help="audit CSV path")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--bonferroni", action="store_true")

    p = sub.add_parser("audit-pie", help="detect PIEs and analyze their composition")
    p.add_argument("--base", required=True)
    p.add_argument("--comp", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--data", default=None, help="dataset dir for attribute analysis")
    p.add_argument("--topk", type=int, default=1)

    p = sub.add_parser("audit-robustness", help="corruption sensitivity report")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--base-models", required=True, help="baseline snapshot directory")
    p.add_argument("--comp-models", required=True, help="compressed snapshot directory")
    p.add_argument("--out", required=True, help="robustness CSV path")
    p.add_argument("--kinds", nargs="+", default=list(CORRUPTION_KINDS))
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="merge audit CSVs into text + JSON reports")
    p.add_argument("--audit", required=True, help="class-audit CSV")
    p.add_argument("--pie", default=None, help="optional PIE CSV")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--chart", action="store_true", help="emit per-class chart data")

    p = sub.add_parser("run", help="full pipeline from a JSON config")
    p.add_argument("--config", default=None, help="experiment config JSON")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--sparsity", default=None, help="comma-separated sweep, e.g. 0.3,0.9")
    p.add_argument("--quant", choices=sorted(_QUANT_FLAGS), action="append", default=None)
    p.add_argument("--topk", type=int, default=None)
    return parser


def _load_models(path: str) -> list:
    files = sorted(Path(path).glob("model_*.json"))
    if not files:
        raise DataError(f"no model_*.json snapshots in {path}")
    return [load_model(f)[0] for f in files]


def _cmd_generate(args) -> int:
    spec = SynthLongTailSpec(
        num_classes=args.classes,
        dim=args.dim,
        train_count=args.train_count,
        test_count=args.test_count,
        zipf_exponent=args.zipf,
        noisy_fraction=args.noisy,
        atypical_fraction=args.atypical,
        seed=args.seed,
    )
    train_path, test_path = generate(spec, args.out)
    print(f"wrote {train_path} and {test_path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    if args.sparsity is not None and args.quant is not None:
        raise ConfigError("choose either --sparsity or --quant, not both")
    train_ds = read_dataset(Path(args.data) / "train.csv")
    test_ds = read_dataset(Path(args.data) / "test.csv")

    if args.sparsity is not None:
        compression = CompressionSpec("magnitude_prune", args.sparsity)
        start = args.prune_start if args.prune_start is not None else args.steps // 10
        end = args.prune_end if args.prune_end is not None else (args.steps * 7) // 10
        every = args.prune_every if args.prune_every is not None else max(
            1, (end - start) // 12
        )
        schedule = PruneSchedule(args.sparsity, start, end, every)
    elif args.quant is not None:
        compression = CompressionSpec(_QUANT_FLAGS[args.quant])
        schedule = None
    else:
        compression = CompressionSpec("none")
        schedule = None

    config = TrainConfig(
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        seed=args.seed,
        population_size=args.models,
        hidden_dims=tuple(args.hidden),
    )
    models, log = train_population(
        train_ds, test_ds, config, compression, schedule, topk=args.topk
    )
    write_prediction_log(log, args.out)
    if args.save_models:
        snap_dir = Path(args.save_models)
        snap_dir.mkdir(parents=True, exist_ok=True)
        for k, model in enumerate(models):
            save_model(model, compression, snap_dir / f"model_{k:03d}.json")
    print(f"wrote {args.out} ({log.num_models} models, {log.num_examples} examples)")
    return EXIT_OK


def _cmd_audit_classes(args) -> int:
    base = read_prediction_log(args.base)
    comp = read_prediction_log(args.comp)
    config = AuditConfig(alpha=args.alpha, bonferroni=args.bonferroni)
    rows = audit_classes(base, comp, config)
    write_audit_csv(rows, args.out)
    n = sum(r.significant for r in rows)
    print(f"wrote {args.out}: {len(rows)} classes, {n} significant at alpha={args.alpha}")
    return EXIT_OK


def _cmd_audit_pie(args) -> int:
    base = read_prediction_log(args.base)
    comp = read_prediction_log(args.comp)
    pies = identify_pies(base, comp)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    truth = {int(e): int(t) for e, t in zip(base.example_ids, base.truth)}
    write_pie_report(pies, truth, out_dir / "pie.csv")

    doc: dict = {"pie_count": len(pies), "examples": len(pies.records)}
    if pies.pie_ids:
        k = min(args.topk, base.topk)
        acc_pie, acc_non, acc_all = subset_accuracy(base, pies, k)
        doc["baseline_topk_on_pies"] = acc_pie
        doc["baseline_topk_on_non_pies"] = acc_non
        doc["baseline_topk_on_all"] = acc_all
        if args.data is not None:
            test_ds = read_dataset(Path(args.data) / "test.csv")
            write_attribute_report(pies, test_ds, out_dir / "attributes.csv")
            doc["attribute_relative_representation"] = (
                attribute_relative_representation(pies, test_ds)
            )
    atomic_write_text(
        out_dir / "pie_summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {out_dir}: {len(pies)} PIEs / {len(pies.records)} examples")
    return EXIT_OK


def _cmd_audit_robustness(args) -> int:
    test_ds = read_dataset(Path(args.data) / "test.csv")
    base_models = _load_models(args.base_models)
    comp_files = sorted(Path(args.comp_models).glob("model_*.json"))
    if not comp_files:
        raise DataError(f"no model_*.json snapshots in {args.comp_models}")
    comp_models = []
    comp_spec = CompressionSpec("none")
    for f in comp_files:
        model, spec = load_model(f)
        comp_models.append(model)
        comp_spec = spec
    rows = robustness_report(
        test_ds,
        list(args.kinds),
        base_models,
        comp_models,
        comp_spec,
        topk=args.topk,
        seed=args.seed,
    )
    write_robustness_report(rows, args.out)
    print(f"wrote {args.out}: {len(rows)} corruption rows")
    return EXIT_OK


def _cmd_report(args) -> int:
    doc = write_report(args.audit, args.out, pie_csv=args.pie, chart=args.chart)
    print(
        f"wrote {args.out}: {doc['classes']} classes, "
        f"{doc['significant_classes']} significant"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    config = (
        load_experiment_config(args.config)
        if args.config is not None
        else ExperimentConfig()
    )
    overrides: dict = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.topk is not None:
        overrides["topk"] = args.topk
    if args.alpha is not None:
        overrides["audit"] = dataclasses.replace(config.audit, alpha=args.alpha)
    if args.sparsity is not None or args.quant:
        sweep: list[CompressionSpec] = [CompressionSpec("none")]
        if args.sparsity is not None:
            for tok in args.sparsity.split(","):
                sweep.append(CompressionSpec("magnitude_prune", float(tok)))
        for q in args.quant or []:
            sweep.append(CompressionSpec(_QUANT_FLAGS[q]))
        overrides["sweep"] = tuple(sweep)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    result = run_pipeline(config)
    print(f"wrote {result.out_dir}/summary.json")
    for entry in result.summary["levels"]:
        print(
            f"  {entry['label']}: top1={entry['top1']:.2f} "
            f"signif={entry['significant_classes']} pies={entry['pie_count']}"
        )
    return EXIT_OK


_HANDLERS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "audit-classes": _cmd_audit_classes,
    "audit-pie": _cmd_audit_pie,
    "audit-robustness": _cmd_audit_robustness,
    "report": _cmd_report,
    "run": _cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except NumericError as exc:
        print(f"compresslens: numeric failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CompressLensError, OSError, json.JSONDecodeError) as exc:
        print(f"compresslens: {args.command} failed: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
