"""The three-phase protocol: pre-train a model, freeze its core, fit new embeddings, evaluate.

Run directories are self-contained::

    manifest.yaml            the manifest that produced everything below
    upstream.{src,tgt}.vocab / downstream.{src,tgt}.vocab
    pretrained.ckpt          (transfer mode) or initialized.ckpt (random-core baselines)
    finetuned.ckpt
    history.json             per-evaluation training curves of every phase
    timing.json              wall-clock seconds per phase (not reproducible, nor is run.log)
    report.json, details.tsv
    run.log
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from transferlab.batching import Example, encode_corpus
from transferlab.errors import ExperimentFailed, FreezeViolation, PhaseError, TransferLabError
from transferlab.metrics import MetricReport, evaluate_full
from transferlab.model import (
    PartitionedModel,
    build_model,
    core_checksum,
    save_checkpoint,
    set_trainable,
    swap_embeddings,
)
from transferlab.pipeline.manifest import Manifest
from transferlab.pipeline.train import TrainResult, train
from transferlab.tasks import (
    BitextCorpus,
    downsample,
    gen_copy,
    gen_reversal,
    load_bitext,
    mask_sql_corpus,
    split,
    swap_direction,
)
from transferlab.vocab import Vocab, build_vocab

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskData:
    corpus: BitextCorpus  # after transforms and downsampling, before any split
    train: BitextCorpus
    val: BitextCorpus
    test: BitextCorpus | None
    src_vocab: Vocab
    tgt_vocab: Vocab

    def examples(self, part: str) -> list[Example]:
        return encode_corpus(getattr(self, part), self.src_vocab, self.tgt_vocab)

    def vocab_hashes(self) -> dict[str, str]:
        return {"src": self.src_vocab.content_hash(), "tgt": self.tgt_vocab.content_hash()}

    def save_vocabs(self, run_dir: Path, side: str) -> None:
        self.src_vocab.save(run_dir / f"{side}.src.vocab")
        self.tgt_vocab.save(run_dir / f"{side}.tgt.vocab")


def build_corpus(manifest: Manifest, side: str) -> BitextCorpus:
    """Generate or load one side's corpus, then apply its transforms and downsampling."""
    get = lambda key: getattr(manifest, f"{side}_{key}")  # noqa: E731
    task = get("task")
    if task == "file":
        corpus = load_bitext(get("path"), get("format"))
    else:
        args = (get("n"), get("vocab_size"), get("len_min"), get("len_max"))
        if task == "copy":
            corpus = gen_copy(*args, seed=get("seed"), prefix=get("prefix"), perm_seed=get("perm_seed"))
        else:
            corpus = gen_reversal(*args, seed=get("seed"), prefix=get("prefix"))
    for transform in get("transforms"):
        if transform == "swap_direction":
            corpus = swap_direction(corpus)
        else:
            corpus = mask_sql_corpus(corpus, "source" if transform == "mask_sql_source" else "target")
    if get("downsample") is not None:
        corpus = downsample(corpus, get("downsample"), manifest.downsample_seed)
    return corpus


def prepare(manifest: Manifest, side: str) -> TaskData:
    """Split one side into train/val(/test) and build vocabularies on the training part.

    The upstream side has no test split; everything not held out for early
    stopping is used for pre-training.
    """
    corpus = build_corpus(manifest, side)
    test = None
    rest = corpus
    if side == "downstream":
        rest, test = split(corpus, manifest.test_fraction, manifest.split_seed)
    train_part, val = split(rest, manifest.val_fraction, manifest.split_seed + 1)
    src_vocab = build_vocab(rest.sources, manifest.min_freq)
    tgt_vocab = build_vocab(rest.targets, manifest.min_freq)
    return TaskData(corpus, train_part, val, test, src_vocab, tgt_vocab)


# ----------------------------------------------------------------------
# phases


def pretrain(manifest: Manifest, data: TaskData | None = None) -> tuple[PartitionedModel, TrainResult]:
    """Train every parameter on the upstream task until early stopping or the step cap."""
    data = data or prepare(manifest, "upstream")
    model = build_model(manifest.model_config(), data.src_vocab.size, data.tgt_vocab.size, init="xavier",
                        seed=manifest.model_seed)
    set_trainable(model, "all", True)
    log.info("pretraining %d parameters on %d pairs", model.num_parameters(), len(data.train))
    result = train(model, data.examples("train"), data.examples("val"), manifest.pretrain_budget(),
                   seed=manifest.order_seed)
    log.info("pretraining stopped after %d steps, %.1f s", result.steps, result.seconds)
    model.phase = "pretrained"
    model.step = result.steps
    model.vocab_hashes = data.vocab_hashes()
    model.extra["upstream_samples"] = len(data.corpus)
    return model, result


def random_core(manifest: Manifest, data: TaskData) -> PartitionedModel:
    """An untrained model standing in for a pre-trained one in the random-core baselines."""
    init = "uniform" if manifest.mode == "uniform_init" else "xavier"
    return build_model(manifest.model_config(), data.src_vocab.size, data.tgt_vocab.size, init=init,
                       seed=manifest.model_seed, half_width=manifest.init_half_width)


def verify_freeze(core_before: str, model: PartitionedModel, initial_embeddings: dict[str, np.ndarray]) -> None:
    """Raise unless the core is untouched and some embedding table moved."""
    after = core_checksum(model)
    if after != core_before:
        raise FreezeViolation(f"core checksum changed during fine-tuning ({core_before[:12]} -> {after[:12]})")
    if all(np.array_equal(model.embeddings[k].data, v) for k, v in initial_embeddings.items()):
        raise FreezeViolation("fine-tuning left every embedding table at its initial value")


def finetune_frozen(model: PartitionedModel, manifest: Manifest, data: TaskData | None = None,
                    allow_unpretrained: bool = False) -> tuple[PartitionedModel, TrainResult]:
    """Fresh downstream embeddings trained around a frozen core.

    The input model is not modified.  The returned model's core is
    bit-identical to the input's; this is checked before returning.
    """
    if model.phase != "pretrained" and not (allow_unpretrained and model.phase == "initialized"):
        raise PhaseError(f"fine-tuning needs a pretrained checkpoint, got phase {model.phase!r}")
    data = data or prepare(manifest, "downstream")
    core_before = core_checksum(model)
    tuned = swap_embeddings(model, data.src_vocab.size, data.tgt_vocab.size, seed=manifest.embed_seed,
                            allow_unpretrained=allow_unpretrained)
    set_trainable(tuned, "core", False)
    set_trainable(tuned, "embeddings", True)
    initial = {k: t.data.copy() for k, t in tuned.embeddings.items()}
    result = train(tuned, data.examples("train"), data.examples("val"), manifest.finetune_budget(),
                   seed=manifest.order_seed)
    verify_freeze(core_before, tuned, initial)
    tuned.phase = "finetuned"
    tuned.extra["pretrain_steps"] = model.step
    tuned.step = result.steps
    tuned.vocab_hashes = data.vocab_hashes()
    return tuned, result


def train_end_to_end(manifest: Manifest, data: TaskData) -> tuple[PartitionedModel, TrainResult]:
    """Baseline: a fresh model trained on the downstream task alone, nothing frozen."""
    model = build_model(manifest.model_config(), data.src_vocab.size, data.tgt_vocab.size, init="xavier",
                        seed=manifest.model_seed)
    set_trainable(model, "all", True)
    result = train(model, data.examples("train"), data.examples("val"), manifest.finetune_budget(),
                   seed=manifest.order_seed)
    model.phase = "finetuned"
    model.step = result.steps
    model.extra["pretrain_steps"] = 0
    model.vocab_hashes = data.vocab_hashes()
    return model, result


def evaluate(model: PartitionedModel, manifest: Manifest, data: TaskData) -> MetricReport:
    report = evaluate_full(model, data.test, data.src_vocab, data.tgt_vocab, manifest.decode_config(),
                           target_language=manifest.downstream_target_language, batch_size=manifest.batch_size,
                           experiment=manifest.name)
    return replace(report, mode=manifest.mode, upstream_samples=model.extra.get("upstream_samples"),
                   pretrain_steps=model.extra.get("pretrain_steps"))


# ----------------------------------------------------------------------
# full protocol


class _Phase:
    """Context manager that re-raises package errors tagged with the phase name."""

    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("phase: %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, TransferLabError) and not isinstance(exc, ExperimentFailed):
            raise ExperimentFailed(self.name, exc) from exc
        return False


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def run_experiment(manifest: Manifest, run_dir: str | Path) -> MetricReport:
    """Run one manifest end to end, persisting every intermediate artefact in ``run_dir``."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest.save(run_dir / "manifest.yaml")
    handler = logging.FileHandler(run_dir / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("transferlab")
    root.addHandler(handler)
    previous_level = root.level
    root.setLevel(logging.INFO)
    try:
        return _run(manifest, run_dir)
    finally:
        root.removeHandler(handler)
        root.setLevel(previous_level)
        handler.close()


def _run(manifest: Manifest, run_dir: Path) -> MetricReport:
    histories: dict[str, list] = {}
    timing: dict[str, float] = {}
    with _Phase("prepare"):
        down = prepare(manifest, "downstream")
        down.save_vocabs(run_dir, "downstream")

    if manifest.mode == "end_to_end":
        with _Phase("finetune"):
            model, result = train_end_to_end(manifest, down)
            histories["finetune"] = result.history
            timing["finetune_seconds"] = result.seconds
    else:
        if manifest.mode == "transfer":
            with _Phase("pretrain"):
                up = prepare(manifest, "upstream")
                up.save_vocabs(run_dir, "upstream")
                base, result = pretrain(manifest, up)
                histories["pretrain"] = result.history
                timing["pretrain_seconds"] = result.seconds
                save_checkpoint(base, run_dir / "pretrained.ckpt")
        else:
            base = random_core(manifest, down)
            save_checkpoint(base, run_dir / "initialized.ckpt")
        with _Phase("finetune"):
            model, result = finetune_frozen(base, manifest, down, allow_unpretrained=manifest.mode != "transfer")
            histories["finetune"] = result.history
            timing["finetune_seconds"] = result.seconds
    save_checkpoint(model, run_dir / "finetuned.ckpt")
    _write_json(run_dir / "history.json", histories)
    _write_json(run_dir / "timing.json", timing)

    with _Phase("evaluate"):
        report = evaluate(model, manifest, down)
    (run_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (run_dir / "details.tsv").write_text(report.details_tsv(), encoding="utf-8")
    log.info("ppl %.3f acc %.2f bash %.2f", report.perplexity, report.accuracy_pct, report.bash_score)
    return report


def load_report(path: str | Path) -> MetricReport:
    """Read ``report.json`` from a run directory or a direct path."""
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return MetricReport.from_json(path.read_text(encoding="utf-8"))
