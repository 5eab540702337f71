"""Fine-tuning procedures: generative, classifier, test-time, and double.

All four drive the same seeded SGD loop against a backend's train_batch.
Generative-fashion tuning optimizes the label-word continuation, so only
adapter parameters move; classifier-fashion tuning also moves the head.
Test-time tuning snapshots the backend, adapts briefly on the test sample's
retrieved neighbors (using their true labels), predicts, and restores, so
every test sample is handled in isolation unless accumulation is asked for
explicitly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import CapabilityError, ModelBackend, save_checkpoint
from .corpus import CodeSample
from .index import FlatIndex
from .records import PredictionRecord

DEFAULT_RETRIEVAL_K = 6


class TrainingDiverged(RuntimeError):
    """Raised when a loss leaves the finite range; state is restored first
    wherever a snapshot exists."""


@dataclass
class TrainConfig:
    """Hyperparameters for one tuning run."""

    epochs: int = 4
    batch_size: int = 16
    learning_rate: float = 2e-4
    optimizer: str = "paged_adamw_32bit"  # advisory for real backends; the toy path runs plain SGD at the same rate
    seed: int = 0

    def validate(self, allow_zero_epochs: bool = False) -> None:
        floor = 0 if allow_zero_epochs else 1
        if self.epochs < floor:
            raise ValueError(f"epochs must be >= {floor}, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0 and np.isfinite(self.learning_rate)):
            raise ValueError(f"learning_rate must be positive and finite, got {self.learning_rate}")


@dataclass
class TuningRun:
    """What one tuning invocation did, enough to reproduce or audit it."""

    run_id: str
    config: TrainConfig
    loss_trace: list[float]  # one entry per optimization step
    steps_per_epoch: int
    duration_s: float
    data_fingerprint: str
    checkpoint_path: str | None = None


def _data_fingerprint(samples: Sequence[CodeSample]) -> str:
    h = hashlib.sha256()
    for s in samples:
        h.update(f"{s.id}\x00{s.label}\x00".encode("utf-8"))
        h.update(s.code.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def _run_identifier(fashion: str, config: TrainConfig, data_fingerprint: str) -> str:
    payload = json.dumps({"fashion": fashion, "config": asdict(config), "data": data_fingerprint},
                         sort_keys=True)
    return f"{fashion}-{hashlib.sha256(payload.encode('utf-8')).hexdigest()[:12]}"


def _sgd(backend: ModelBackend, samples: Sequence[CodeSample], config: TrainConfig,
         include_head: bool) -> tuple[list[float], int]:
    """Seeded shuffled mini-batch SGD; returns (per-step losses, steps per epoch)."""
    labels = [s.label for s in samples]
    if len(set(labels)) == 1:
        warnings.warn(
            f"all {len(labels)} training labels are {labels[0]}; "
            "the model will drift toward a constant prediction",
            stacklevel=3,
        )
    codes = [s.code for s in samples]
    rng = np.random.default_rng(config.seed)
    n = len(samples)
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    losses: list[float] = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss = backend.train_batch(
                [codes[i] for i in batch],
                [labels[i] for i in batch],
                config.learning_rate,
                include_head=include_head,
            )
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss!r} at epoch {epoch} step {len(losses)} "
                    f"(learning_rate={config.learning_rate})"
                )
            losses.append(loss)
    return losses, steps_per_epoch


def _finetune(backend: ModelBackend, samples: Sequence[CodeSample], config: TrainConfig,
              fashion: str, capability: str, include_head: bool) -> TuningRun:
    if capability not in backend.descriptor.capabilities:
        raise CapabilityError(f"backend {backend.descriptor.name!r} lacks the {capability!r} capability")
    if not samples:
        raise ValueError("cannot tune on an empty sample collection")
    config.validate()
    fingerprint = _data_fingerprint(samples)
    base_before = backend.base_fingerprint()
    started = time.perf_counter()
    losses, steps_per_epoch = _sgd(backend, samples, config, include_head=include_head)
    duration = time.perf_counter() - started
    if backend.base_fingerprint() != base_before:
        raise RuntimeError("base weights changed during tuning; only adapters and head may train")
    return TuningRun(
        run_id=_run_identifier(fashion, config, fingerprint),
        config=config,
        loss_trace=losses,
        steps_per_epoch=steps_per_epoch,
        duration_s=duration,
        data_fingerprint=fingerprint,
    )


def finetune_generative(backend: ModelBackend, samples: Sequence[CodeSample],
                        config: TrainConfig | None = None) -> TuningRun:
    """Tune the label-word continuation; only adapter parameters update.

    The loss masks everything except the label word the model should emit
    after the prompt cue, which for a two-word output vocabulary is the
    log-loss of the vulnerable-class probability.
    """
    return _finetune(backend, samples, config or TrainConfig(),
                     fashion="generative", capability="generative", include_head=False)


def finetune_classifier(backend: ModelBackend, samples: Sequence[CodeSample],
                        config: TrainConfig | None = None) -> TuningRun:
    """Tune adapters plus the classifier head on binary log-loss."""
    return _finetune(backend, samples, config or TrainConfig(),
                     fashion="classifier", capability="classifier", include_head=True)


def default_tt_config(k: int = DEFAULT_RETRIEVAL_K) -> TrainConfig:
    """Minimal test-time tuning defaults: one epoch over the k neighbors."""
    return TrainConfig(epochs=1, batch_size=k, learning_rate=2e-4, seed=0)


def testtime_finetune_predict(
    backend: ModelBackend,
    index: FlatIndex,
    train: Sequence[CodeSample],
    test_sample: CodeSample,
    k: int = DEFAULT_RETRIEVAL_K,
    tt_config: TrainConfig | None = None,
    accumulate: bool = False,
) -> PredictionRecord:
    """Adapt briefly on the test sample's nearest neighbors, then predict.

    The backend state is snapshotted first and restored afterwards (also on
    failure), so consecutive calls are independent. Neighbors are retrieved
    by embedding the test code, carry their true labels into the short
    tuning, and are logged on the returned record. Zero tt epochs is a
    legitimate no-op: the prediction is then the snapshot model's own.
    With accumulate=True the adapted state is deliberately kept, letting
    successive test samples compound; the default always restores.
    """
    for capability in ("classifier", "embedder"):
        if capability not in backend.descriptor.capabilities:
            raise CapabilityError(f"backend {backend.descriptor.name!r} lacks the {capability!r} capability")
    config = tt_config if tt_config is not None else default_tt_config(k)
    config.validate(allow_zero_epochs=True)
    by_id = {s.id: s for s in train}
    snap = backend.snapshot()
    try:
        query = backend.embed(test_sample.code)
        hits = index.query(query, k, exclude_id=test_sample.id)
        neighbors = []
        for sample_id, _ in hits:
            if sample_id not in by_id:
                raise ValueError(f"index id {sample_id!r} is not in the training collection")
            neighbors.append(by_id[sample_id])
        if config.epochs > 0:
            _sgd(backend, neighbors, config, include_head=True)
        score = backend.classify(test_sample.code)
    except BaseException:
        backend.restore(snap)
        raise
    record = PredictionRecord(
        sample_id=test_sample.id,
        label=int(score > 0.5),
        score=score,
        neighbor_ids=[sample_id for sample_id, _ in hits],
        neighbor_distances=[distance for _, distance in hits],
    )
    if not accumulate:
        backend.restore(snap)
    return record


def double_finetune_evaluate(
    backend: ModelBackend,
    train: Sequence[CodeSample],
    index: FlatIndex,
    test: Sequence[CodeSample],
    global_config: TrainConfig | None = None,
    tt_config: TrainConfig | None = None,
    k: int = DEFAULT_RETRIEVAL_K,
    accumulate: bool = False,
) -> list[PredictionRecord]:
    """Global classifier tuning once, then per-sample test-time tuning.

    Every test sample starts from the post-global state: the per-sample
    adaptation snapshots and restores internally, so test order cannot leak
    between samples (unless accumulate=True is requested explicitly). The
    backend is left in its post-global-tuning state afterwards.
    """
    finetune_classifier(backend, train, global_config)
    records = []
    for sample in test:
        records.append(
            testtime_finetune_predict(
                backend, index, train, sample, k=k, tt_config=tt_config, accumulate=accumulate
            )
        )
    return records


def save_tuning_run(run: TuningRun, backend: ModelBackend, out_dir: str | Path) -> dict[str, str]:
    """Persist a run: manifest JSON, per-step loss table, parameter checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out_dir / "checkpoint.bin"
    save_checkpoint(backend, checkpoint_path)
    run.checkpoint_path = str(checkpoint_path)
    trace_path = out_dir / "loss_trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for step, loss in enumerate(run.loss_trace):
            writer.writerow([step, repr(loss)])
    manifest_path = out_dir / "tuning_run.json"
    manifest = {
        "run_id": run.run_id,
        "config": asdict(run.config),
        "steps_per_epoch": run.steps_per_epoch,
        "steps_total": len(run.loss_trace),
        "duration_s": run.duration_s,
        "data_fingerprint": run.data_fingerprint,
        "base_fingerprint": backend.base_fingerprint(),
        "artifacts": {"loss_trace": trace_path.name, "checkpoint": checkpoint_path.name},
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"manifest": str(manifest_path), "loss_trace": str(trace_path), "checkpoint": str(checkpoint_path)}
