"""Command-line entry point: prepare data, run techniques, merge reports.

Every command writes its outputs under a manifest so results stay
reproducible and auditable. A run directory looks like

    runs/<run_id>/
        manifest.json       command, config snapshot, seeds, data fingerprint
        predictions.jsonl   one prediction record per test sample
        report.json         the evaluation report
        plots/              vector-graphic plots, when scores exist
        tuning/             loss trace + checkpoint, for tuned techniques

Run ids derive from the technique, config, and data fingerprint, so
re-running the same experiment reproduces the same directory and byte
-identical reports. The results root defaults to ./runs, or the
CVDLAB_RESULTS_ROOT environment variable when set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import config as config_mod
from .backend import ModelBackend, create_backend, save_checkpoint
from .corpus import CodeSample, DatasetSplit, balance_undersample, ingest, load_jsonl, save_jsonl, split, write_split_manifest
from .evaluation import TABLE_COLUMNS, EvalReport, evaluate_predictions, roc, table_row
from .index import FlatIndex, build_index
from .prompting import (
    parse_label,
    render_few_shot,
    render_zero_shot,
    select_rag,
    select_random_balanced,
    select_same_cwe,
)
from .records import PredictionRecord
from .tuning import (
    TrainConfig,
    double_finetune_evaluate,
    finetune_classifier,
    finetune_generative,
    save_tuning_run,
    testtime_finetune_predict,
)
from .visualization import emit_roc_plot

RESULTS_ROOT_ENV = "CVDLAB_RESULTS_ROOT"

TECHNIQUES = (
    "zero-shot",
    "few-shot-random",
    "few-shot-cwe",
    "few-shot-rag",
    "finetune-generative",
    "finetune-classifier",
    "tt-finetune",
    "double-finetune",
)

MANIFEST_SCHEMA_VERSION = 1


@dataclass
class RunManifest:
    """Provenance record written before, and finalized after, any results."""

    run_id: str
    command: str
    technique: str | None
    config: dict
    seed: int
    data_fingerprint: str | None
    started_at: str
    finished_at: str | None
    artifacts: dict[str, str]
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def write(self, path: Path) -> None:
        _atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _derive_seed(base: int, token: str) -> int:
    """Stable per-item seed so runs do not depend on iteration order."""
    digest = hashlib.blake2b(f"{base}:{token}".encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "little")


def _file_fingerprint(*paths: str | Path) -> str:
    h = hashlib.sha256()
    for path in paths:
        h.update(Path(path).read_bytes())
        h.update(b"\x00")
    return h.hexdigest()


def _run_id(command: str, technique: str | None, cfg: dict, data_fingerprint: str | None) -> str:
    payload = json.dumps(
        {"command": command, "technique": technique, "config": cfg, "data": data_fingerprint},
        sort_keys=True,
        default=str,
    )
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]
    return f"{technique or command}-{digest}"


def _build_backend(cfg: dict) -> ModelBackend:
    options = dict(cfg["backend"])
    name = options.pop("name")
    return create_backend(name, **options)


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        optimizer=t["optimizer"],
        seed=cfg["seed"],
    )


def _tt_config(cfg: dict, k: int) -> TrainConfig:
    t = cfg["tt"]
    return TrainConfig(
        epochs=t["epochs"],
        batch_size=t["batch_size"] if t["batch_size"] else k,
        learning_rate=t["learning_rate"],
        seed=cfg["seed"],
    )


def cmd_prepare(cfg: dict, out_dir: Path) -> Path:
    """Ingest, split, balance, and write the canonical JSONL files."""
    pcfg = cfg["prepare"]
    if not pcfg.get("input"):
        raise ValueError("prepare.input must point at the source corpus file")
    out_dir.mkdir(parents=True, exist_ok=True)

    print(f"[1/4] ingesting {pcfg['input']} ({pcfg['format']})")
    columns = {role: col for role, col in pcfg["columns"].items() if col}
    result = ingest(
        pcfg["input"],
        format=pcfg["format"],
        column_map=columns,
        delimiter=pcfg["delimiter"],
        origin=pcfg.get("origin"),
    )
    n_vulnerable = sum(s.label for s in result.samples)
    print(
        f"      {len(result.samples)} samples accepted ({n_vulnerable} vulnerable, "
        f"{len(result.samples) - n_vulnerable} safe), {result.skipped} rows skipped"
    )

    if result.split_assignments:
        print("[2/4] applying the pre-assigned split column")
        dataset_split = split(result.samples, assigned=result.split_assignments)
    else:
        ratios = tuple(pcfg["ratios"])
        print(f"[2/4] splitting {ratios} with seed {cfg['seed']}")
        dataset_split = split(result.samples, ratios=ratios, seed=cfg["seed"])

    print("[3/4] balancing classes by random under-sampling")
    balanced: dict[str, list[CodeSample]] = {}
    for name, part in dataset_split.parts():
        if pcfg["balance"].get(name, True) and part:
            kept = balance_undersample(part, seed=_derive_seed(cfg["seed"], f"balance:{name}"))
        else:
            kept = list(part)
        balanced[name] = kept
        print(f"      {name}: {len(part)} -> {len(kept)}")

    print(f"[4/4] writing JSONL files under {out_dir}")
    data_fingerprint = _file_fingerprint(pcfg["input"])
    manifest = RunManifest(
        run_id=_run_id("prepare", None, cfg, data_fingerprint),
        command="prepare",
        technique=None,
        config=cfg,
        seed=cfg["seed"],
        data_fingerprint=data_fingerprint,
        started_at=_now(),
        finished_at=None,
        artifacts={
            "train": "train.jsonl",
            "valid": "valid.jsonl",
            "test": "test.jsonl",
            "split_manifest": "split_manifest.json",
        },
    )
    manifest.write(out_dir / "manifest.json")
    for name in ("train", "valid", "test"):
        save_jsonl(balanced[name], out_dir / f"{name}.jsonl")
    written_split = DatasetSplit(
        balanced["train"], balanced["valid"], balanced["test"],
        seed=dataset_split.seed, ratios=dataset_split.ratios, assigned=dataset_split.assigned,
    )
    write_split_manifest(written_split, out_dir / "split_manifest.json")
    manifest.finished_at = _now()
    manifest.write(out_dir / "manifest.json")
    print(f"      done: {manifest.run_id}")
    return out_dir


def _predict_generative(backend: ModelBackend, test: list[CodeSample]) -> list[PredictionRecord]:
    records = []
    for sample in test:
        prompt = render_zero_shot(sample.code)
        text = backend.generate(prompt)
        records.append(PredictionRecord(sample_id=sample.id, label=parse_label(text), generated_text=text))
    return records


def _predict_few_shot(backend: ModelBackend, train: list[CodeSample], test: list[CodeSample],
                      cfg: dict, technique: str) -> list[PredictionRecord]:
    records = []
    index = None
    if technique == "few-shot-rag":
        print("      building the retrieval index over the training set")
        index = build_index(train, backend.embed)
    for sample in test:
        seed = _derive_seed(cfg["seed"], sample.id)
        if technique == "few-shot-random":
            selection = select_random_balanced(train, seed=seed, exclude_id=sample.id)
        elif technique == "few-shot-cwe":
            selection = select_same_cwe(train, sample.cwe, seed=seed, exclude_id=sample.id)
        else:
            query = backend.embed(sample.code)
            selection = select_rag(index, query, train, k=cfg["retrieval"]["k"], exclude_id=sample.id)
        prompt = render_few_shot(sample.code, selection)
        text = backend.generate(prompt)
        records.append(
            PredictionRecord(
                sample_id=sample.id,
                label=parse_label(text),
                generated_text=text,
                neighbor_ids=[s.id for s, _ in selection.examples] if technique == "few-shot-rag" else None,
                neighbor_distances=selection.distances,
                degraded=selection.degraded,
            )
        )
    return records


def _predict_classifier(backend: ModelBackend, test: list[CodeSample]) -> list[PredictionRecord]:
    records = []
    for sample in test:
        score = backend.classify(sample.code)
        records.append(PredictionRecord(sample_id=sample.id, label=int(score > 0.5), score=score))
    return records


def cmd_run(technique: str, cfg: dict, results_root: Path) -> Path:
    """Execute one technique end to end and write its run directory."""
    if technique not in TECHNIQUES:
        raise ValueError(f"unknown technique {technique!r}, expected one of {', '.join(TECHNIQUES)}")
    for role in ("train", "test"):
        if not cfg["data"].get(role):
            raise ValueError(f"data.{role} must point at a prepared JSONL file")
    print(f"[1/4] loading data for {technique}")
    train = load_jsonl(cfg["data"]["train"])
    test = load_jsonl(cfg["data"]["test"])
    print(f"      {len(train)} train / {len(test)} test samples")
    data_fingerprint = _file_fingerprint(cfg["data"]["train"], cfg["data"]["test"])

    run_id = _run_id("run", technique, cfg, data_fingerprint)
    run_dir = results_root / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "plots").mkdir(exist_ok=True)
    manifest = RunManifest(
        run_id=run_id,
        command="run",
        technique=technique,
        config=cfg,
        seed=cfg["seed"],
        data_fingerprint=data_fingerprint,
        started_at=_now(),
        finished_at=None,
        artifacts={"predictions": "predictions.jsonl", "report": "report.json"},
    )
    manifest.write(run_dir / "manifest.json")

    backend = _build_backend(cfg)
    k = cfg["retrieval"]["k"]
    print(f"[2/4] running {technique} on backend {backend.descriptor.name!r}")
    if technique == "zero-shot":
        records = _predict_generative(backend, test)
    elif technique in ("few-shot-random", "few-shot-cwe", "few-shot-rag"):
        records = _predict_few_shot(backend, train, test, cfg, technique)
    elif technique == "finetune-generative":
        run = finetune_generative(backend, train, _train_config(cfg))
        save_tuning_run(run, backend, run_dir / "tuning")
        manifest.artifacts["tuning"] = "tuning/tuning_run.json"
        records = _predict_generative(backend, test)
    elif technique == "finetune-classifier":
        run = finetune_classifier(backend, train, _train_config(cfg))
        save_tuning_run(run, backend, run_dir / "tuning")
        manifest.artifacts["tuning"] = "tuning/tuning_run.json"
        records = _predict_classifier(backend, test)
    elif technique == "tt-finetune":
        print("      building the retrieval index over the training set")
        index = build_index(train, backend.embed)
        tt = _tt_config(cfg, k)
        records = [
            testtime_finetune_predict(backend, index, train, sample, k=k, tt_config=tt)
            for sample in test
        ]
    else:  # double-finetune
        print("      building the retrieval index over the training set")
        index = build_index(train, backend.embed)
        records = double_finetune_evaluate(
            backend, train, index, test,
            global_config=_train_config(cfg), tt_config=_tt_config(cfg, k), k=k,
        )
        # The backend ends up in its post-global-tuning state; keep that
        # checkpoint so the run can be reloaded later.
        tuning_dir = run_dir / "tuning"
        tuning_dir.mkdir(parents=True, exist_ok=True)
        save_checkpoint(backend, tuning_dir / "checkpoint.bin")
        manifest.artifacts["tuning"] = "tuning/checkpoint.bin"

    print("[3/4] evaluating predictions")
    labels = {s.id: s.label for s in test}
    report = evaluate_predictions(
        records,
        labels,
        unparseable_policy=cfg["eval"]["unparseable_policy"],
        run_id=run_id,
        dataset_fingerprint=data_fingerprint,
    )

    print(f"[4/4] writing results under {run_dir}")
    lines = []
    for record in records:
        row = {"run_id": run_id, **record.to_dict(), "label_true": labels[record.sample_id]}
        lines.append(json.dumps(row, sort_keys=True))
    _atomic_write_text(run_dir / "predictions.jsonl", "\n".join(lines) + "\n")
    _atomic_write_text(run_dir / "report.json", report.to_json())

    scores = [r.score for r in records]
    truths = [labels[r.sample_id] for r in records]
    if cfg["plots"]["enabled"] and all(s is not None for s in scores) and len(set(truths)) == 2:
        curve = roc(scores, truths)
        emit_roc_plot([(technique, curve)], run_dir / "plots" / "roc.svg")
        manifest.artifacts["roc_plot"] = "plots/roc.svg"

    manifest.finished_at = _now()
    manifest.write(run_dir / "manifest.json")
    print(
        f"      done: {run_id} "
        f"(accuracy {report.accuracy:.3f}, macro F1 {report.f1_macro:.3f}, "
        f"{report.unparseable} unparseable)"
    )
    return run_dir


def cmd_report(run_dirs: list[Path], out_dir: Path, cfg: dict) -> Path:
    """Merge run reports into one comparison table plus a ROC overlay."""
    if not run_dirs:
        raise ValueError("need at least one run directory to report on")
    rows = []
    curves = []
    for run_dir in run_dirs:
        manifest_path = run_dir / "manifest.json"
        if not manifest_path.is_file():
            raise FileNotFoundError(f"no manifest found under {run_dir}")
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        report = EvalReport.from_json((run_dir / "report.json").read_text(encoding="utf-8"))
        technique = manifest.get("technique") or manifest.get("command", "unknown")
        rows.append(table_row(report, technique))
        scores, truths = [], []
        with open(run_dir / "predictions.jsonl", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    row = json.loads(line)
                    scores.append(row.get("score"))
                    truths.append(row.get("label_true"))
        if scores and all(s is not None for s in scores) and len(set(truths)) == 2:
            curves.append((technique, roc(scores, truths)))
        else:
            print(f"      note: {run_dir.name} has no scores; left off the ROC overlay")

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        run_id=_run_id("report", None, cfg, None),
        command="report",
        technique=None,
        config={"runs": [str(d) for d in run_dirs]},
        seed=cfg["seed"],
        data_fingerprint=None,
        started_at=_now(),
        finished_at=None,
        artifacts={"table": "comparison.csv"},
    )
    manifest.write(out_dir / "manifest.json")

    with open(out_dir / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(TABLE_COLUMNS))
        writer.writeheader()
        writer.writerows(rows)
    if curves:
        emit_roc_plot(curves, out_dir / "roc_overlay.svg")
        manifest.artifacts["roc_overlay"] = "roc_overlay.svg"
    manifest.finished_at = _now()
    manifest.write(out_dir / "manifest.json")
    print(f"      wrote {out_dir / 'comparison.csv'} ({len(rows)} rows, {len(curves)} curves)")
    return out_dir


def cmd_index_build(cfg: dict, out_path: Path) -> Path:
    """Embed the training set with the configured backend and save the index."""
    if not cfg["data"].get("train"):
        raise ValueError("data.train must point at a prepared JSONL file")
    train = load_jsonl(cfg["data"]["train"])
    backend = _build_backend(cfg)
    print(f"[1/2] embedding {len(train)} samples with backend {backend.descriptor.name!r}")
    index = build_index(train, backend.embed)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    print(f"[2/2] writing {out_path} ({index.size} x {index.dim})")
    index.save(out_path)
    manifest = RunManifest(
        run_id=_run_id("index-build", None, cfg, _file_fingerprint(cfg["data"]["train"])),
        command="index-build",
        technique=None,
        config=cfg,
        seed=cfg["seed"],
        data_fingerprint=_file_fingerprint(cfg["data"]["train"]),
        started_at=_now(),
        finished_at=_now(),
        artifacts={"index": out_path.name},
    )
    manifest.write(out_path.with_name(out_path.name + ".manifest.json"))
    return out_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvdlab",
        description="Run code-vulnerability-detection experiments: prepare data, "
        "run prompting/tuning techniques, and merge reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="YAML/JSON config file layered over the defaults")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path config override, repeatable")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--backend", help="override backend.name")
        p.add_argument("--out-dir", help="output directory (results root for run)")

    p_prepare = sub.add_parser("prepare", help="ingest, split, and balance a corpus")
    add_common(p_prepare)

    p_run = sub.add_parser("run", help="run one technique end to end")
    p_run.add_argument("technique", choices=TECHNIQUES)
    add_common(p_run)

    p_report = sub.add_parser("report", help="merge run results into one table")
    p_report.add_argument("runs", nargs="+", help="run ids (under the results root) or run directories")
    add_common(p_report)

    p_index = sub.add_parser("index-build", help="embed the training set and save a flat index")
    add_common(p_index)
    p_index.add_argument("--out", help="index file path (default <out-dir>/index.bin)")

    return parser


def _load_cfg(args: argparse.Namespace) -> dict:
    cfg = config_mod.load_config(args.config)
    cfg = config_mod.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.backend:
        cfg["backend"]["name"] = args.backend
    return cfg


def _results_root(args: argparse.Namespace) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    return Path(os.environ.get(RESULTS_ROOT_ENV, "runs"))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.command == "prepare":
            cmd_prepare(cfg, Path(args.out_dir or "prepared"))
        elif args.command == "run":
            cmd_run(args.technique, cfg, _results_root(args))
        elif args.command == "report":
            root = _results_root(args)
            run_dirs = [Path(r) if Path(r).is_dir() else root / r for r in args.runs]
            cmd_report(run_dirs, root / "report", cfg)
        elif args.command == "index-build":
            out = Path(args.out) if args.out else _results_root(args) / "index.bin"
            cmd_index_build(cfg, out)
    except Exception as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
