"""Perplexity, token accuracy, and the combined evaluation report.

Metric functions accept any object with a ``teacher_forced_logits(src_ids,
tgt_in_ids)`` method returning a (batch, positions, V) array, so hand-built
scorers can stand in for a trained model.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from transferlab.bash import SCORE_VERSION, bash_corpus_score, bash_similarity
from transferlab.batching import Example, batches, encode_corpus
from transferlab.errors import EmptyCorpus, InvalidArgument, PhaseError
from transferlab.model import greedy_decode
from transferlab.tasks import BitextCorpus
from transferlab.vocab import PAD, Vocab, decode

EXACT_MATCH_FALLBACK = "exact-match-fallback"
TABLE_COLUMNS = ("experiment", "ppl", "Acc.", "BaSH")


@dataclass(frozen=True)
class DecodeConfig:
    algorithm: str = "greedy"
    max_len: int = 64

    def __post_init__(self):
        if self.algorithm != "greedy":
            raise InvalidArgument(f"only greedy decoding is implemented, got {self.algorithm!r}")
        if self.max_len < 1:
            raise InvalidArgument("max_len must be at least 1")


@dataclass(frozen=True)
class TeacherForcedStats:
    nll_sum: float
    correct: int
    tokens: int


def teacher_forced_stats(model, examples: Sequence[Example], batch_size: int = 64) -> TeacherForcedStats:
    """One pass of unsmoothed NLL and argmax hits over non-PAD target positions."""
    nll_sum = 0.0
    correct = tokens = 0
    for src, tgt_in, gold in batches(examples, batch_size):
        logits = np.asarray(model.teacher_forced_logits(src, tgt_in), dtype=np.float64)
        valid = gold != PAD
        if not valid.any():
            continue
        shifted = logits - logits.max(axis=-1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        gold_logp = np.take_along_axis(logp, gold[..., None], axis=-1)[..., 0]
        nll_sum += float(-gold_logp[valid].sum())
        correct += int(((logits.argmax(axis=-1) == gold) & valid).sum())
        tokens += int(valid.sum())
    return TeacherForcedStats(nll_sum, correct, tokens)


def _examples(corpus, src_vocab, tgt_vocab) -> list[Example]:
    if isinstance(corpus, BitextCorpus):
        return encode_corpus(corpus, src_vocab, tgt_vocab)
    return list(corpus)


def perplexity(model, corpus, src_vocab: Vocab | None = None, tgt_vocab: Vocab | None = None,
               batch_size: int = 64) -> float:
    """exp of the mean per-token NLL (natural log), EOS included, PAD excluded."""
    stats = teacher_forced_stats(model, _examples(corpus, src_vocab, tgt_vocab), batch_size)
    if stats.tokens == 0:
        raise EmptyCorpus("no target tokens to score")
    return math.exp(stats.nll_sum / stats.tokens)


def token_accuracy(model, corpus, src_vocab: Vocab | None = None, tgt_vocab: Vocab | None = None,
                   batch_size: int = 64) -> float:
    stats = teacher_forced_stats(model, _examples(corpus, src_vocab, tgt_vocab), batch_size)
    if stats.tokens == 0:
        raise EmptyCorpus("no target tokens to score")
    return 100.0 * stats.correct / stats.tokens


@dataclass(frozen=True)
class MetricReport:
    perplexity: float
    accuracy_pct: float
    bash_score: float
    examples: int
    target_tokens: int
    bash_metric: str = SCORE_VERSION
    decode_algorithm: str = "greedy"
    decode_max_len: int = 64
    perplexity_base: str = "e"
    accuracy_mode: str = "teacher-forced"
    phase: str = ""
    experiment: str = ""
    mode: str = ""
    upstream_samples: int | None = None
    pretrain_steps: int | None = None
    details: tuple[dict, ...] = field(default=(), compare=False, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("details")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> MetricReport:
        known = {f.name for f in fields(cls)} - {"details"}
        return cls(**{k: v for k, v in d.items() if k in known})

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        return cls.from_dict(json.loads(text))

    def tsv_row(self, experiment: str | None = None) -> str:
        label = self.experiment if experiment is None else experiment
        return f"{label}\t{self.perplexity:.2f}\t{self.accuracy_pct:.1f}\t{self.bash_score:.1f}"

    def details_tsv(self) -> str:
        lines = ["source\treference\tprediction\tscore"]
        for row in self.details:
            lines.append(f"{row['source']}\t{row['reference']}\t{row['prediction']}\t{row['score']:.2f}")
        return "\n".join(lines) + "\n"


def evaluate_full(model, corpus: BitextCorpus, src_vocab: Vocab, tgt_vocab: Vocab,
                  decode_config: DecodeConfig | None = None, target_language: str = "bash",
                  batch_size: int = 64, allow_any_phase: bool = False, experiment: str = "") -> MetricReport:
    """Teacher-forced ppl/accuracy plus a free-decoding structural score.

    For Bash targets the structural score is the corpus-mean similarity.  For
    anything else it is 100 x the exact-match rate, tagged in ``bash_metric``.
    """
    decode_config = decode_config or DecodeConfig()
    phase = getattr(model, "phase", "")
    if phase != "finetuned" and not allow_any_phase:
        raise PhaseError(f"evaluate_full expects a finetuned model, got phase {phase!r}")
    if target_language not in ("bash", "other"):
        raise InvalidArgument(f"target_language must be 'bash' or 'other', got {target_language!r}")

    examples = encode_corpus(corpus, src_vocab, tgt_vocab)
    stats = teacher_forced_stats(model, examples, batch_size)
    if stats.tokens == 0:
        raise EmptyCorpus("no target tokens to score")

    predictions: list[str] = []
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        for ids in greedy_decode(model, [e.src for e in chunk], decode_config.max_len):
            predictions.append(decode(tgt_vocab, ids))
    references = corpus.targets
    if target_language == "bash":
        scores = [bash_similarity(p, r).value for p, r in zip(predictions, references)]
        structural = bash_corpus_score(predictions, references)
        metric = SCORE_VERSION
    else:
        scores = [100.0 if p == r else 0.0 for p, r in zip(predictions, references)]
        structural = sum(scores) / len(scores)
        metric = EXACT_MATCH_FALLBACK
    details = tuple(
        dict(source=s, reference=r, prediction=p, score=sc)
        for s, r, p, sc in zip(corpus.sources, references, predictions, scores)
    )
    return MetricReport(
        perplexity=math.exp(stats.nll_sum / stats.tokens),
        accuracy_pct=100.0 * stats.correct / stats.tokens,
        bash_score=structural,
        examples=len(examples),
        target_tokens=stats.tokens,
        bash_metric=metric,
        decode_algorithm=decode_config.algorithm,
        decode_max_len=decode_config.max_len,
        phase=phase,
        experiment=experiment,
        details=details,
    )
