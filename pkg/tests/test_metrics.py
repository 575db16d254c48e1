import math

import numpy as np
import pytest

from transferlab.batching import Example, encode_corpus
from transferlab.errors import EmptyCorpus, PhaseError
from transferlab.metrics import (
    EXACT_MATCH_FALLBACK,
    DecodeConfig,
    MetricReport,
    evaluate_full,
    perplexity,
    teacher_forced_stats,
    token_accuracy,
)
from transferlab.model import ModelConfig, build_model
from transferlab.tasks import from_pairs, gen_copy
from transferlab.vocab import BOS, EOS, PAD, build_vocab

V = 8


def unpadded(row) -> tuple[int, ...]:
    """Decoder input without padding (and the EOS a padded row may carry where gold is PAD)."""
    out = tuple(int(x) for x in row if x != PAD)
    return out[:-1] if out and out[-1] == EOS else out


class TableScorer:
    """Logits from a fixed function of the gold-prefix position."""

    def __init__(self, fn):
        self.fn = fn

    def teacher_forced_logits(self, src, tgt_in):
        b, t = tgt_in.shape
        return np.stack([[self.fn(i, j, tgt_in) for j in range(t)] for i in range(b)])


def uniform():
    return TableScorer(lambda i, j, tgt: np.zeros(V))


def constant(k):
    def fn(i, j, tgt):
        row = np.zeros(V)
        row[k] = 5.0
        return row
    return TableScorer(fn)


def oracle(examples):
    golds = [e.tgt[1:] for e in examples]

    def fn(i, j, tgt):
        row = np.full(V, -1e4)
        # identify the example by its unpadded decoder input
        row_in = unpadded(tgt[i])
        for gold, ex in zip(golds, examples):
            if row_in == ex.tgt[:-1] and j < len(gold):
                row[gold[j]] = 0.0
                return row
        row[PAD] = 0.0
        return row
    return TableScorer(fn)


def random_examples(seed, n=12):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        k = int(rng.integers(1, 6))
        body = tuple(int(x) for x in rng.integers(4, V, size=k))
        out.append(Example(body + (EOS,), (BOS,) + body + (EOS,)))
    return out


def test_uniform_scorer_perplexity_is_vocab_size():
    for seed in range(3):
        assert perplexity(uniform(), random_examples(seed)) == pytest.approx(V, rel=1e-3)


def test_zeroed_output_embedding_is_uniform():
    corpus = gen_copy(40, 10, seed=2)
    sv, tv = build_vocab(corpus.sources), build_vocab(corpus.targets)
    model = build_model(ModelConfig.desk(), sv.size, tv.size, seed=0)
    model.tgt_embed.data[...] = 0.0
    assert perplexity(model, corpus, sv, tv) == pytest.approx(tv.size, rel=1e-3)


def test_hand_computed_sqrt8():
    # one example, gold tokens (4, EOS) with probabilities 0.5 and 0.25
    ex = [Example((4, EOS), (BOS, 4, EOS))]

    def fn(i, j, tgt):
        p = np.full(V, 0.5 / (V - 1)) if j == 0 else np.full(V, 0.75 / (V - 1))
        p[4 if j == 0 else EOS] = 0.5 if j == 0 else 0.25
        return np.log(p)

    assert perplexity(TableScorer(fn), ex) == pytest.approx(math.sqrt(8), abs=1e-6)


def test_oracle_scores_perfectly():
    ex = random_examples(5)
    assert perplexity(oracle(ex), ex) == pytest.approx(1.0, abs=1e-9)
    assert token_accuracy(oracle(ex), ex) == 100.0


def test_constant_model_half_right():
    k = 5
    ex = [Example((k, EOS), (BOS, k, EOS)) for _ in range(4)]  # gold: k, EOS, k, EOS, ...
    assert token_accuracy(constant(k), ex) == 50.0


def test_ties_break_to_lowest_id():
    ex = [Example((4, EOS), (BOS, 4, EOS))]
    # all logits equal: argmax is id 0 (PAD), never the gold
    assert token_accuracy(uniform(), ex) == 0.0
    tie = TableScorer(lambda i, j, t: np.where(np.arange(V) >= 3, 1.0, 0.0))
    assert token_accuracy(tie, [Example((3, EOS), (BOS, EOS))]) == 100.0  # ids 3..7 tie -> 3 == EOS


def test_all_pad_targets_raise():
    ex = [Example((EOS,), (BOS,)), Example((4, EOS), (BOS,))]
    with pytest.raises(EmptyCorpus):
        perplexity(uniform(), ex)
    with pytest.raises(EmptyCorpus):
        token_accuracy(uniform(), ex)


def test_streaming_identity():
    ex = random_examples(7, n=20)
    rng = np.random.default_rng(0)
    noise = rng.normal(size=(64, 16, V))
    scorer = TableScorer(lambda i, j, t: noise[hash(unpadded(t[i])) % 64, j])
    # second implementation: one example at a time, probabilities not log-probabilities
    total, count = 0.0, 0
    for e in ex:
        logits = scorer.teacher_forced_logits(np.array([e.src]), np.array([e.tgt[:-1]]))[0]
        for j, g in enumerate(e.tgt[1:]):
            p = np.exp(logits[j] - logits[j].max())
            total -= math.log(p[g] / p.sum())
            count += 1
    assert perplexity(scorer, ex, batch_size=5) == pytest.approx(math.exp(total / count), rel=1e-12)


def test_batching_invariance():
    corpus = gen_copy(50, 10, seed=4)
    sv, tv = build_vocab(corpus.sources), build_vocab(corpus.targets)
    model = build_model(ModelConfig.desk(), sv.size, tv.size, seed=1)
    ex = encode_corpus(corpus, sv, tv)
    accs = {token_accuracy(model, order, batch_size=bs) for bs in (1, 7, 64) for order in (ex, ex[::-1])}
    assert len(accs) == 1
    s1 = teacher_forced_stats(model, ex, 1)
    s2 = teacher_forced_stats(model, ex[::-1], 64)
    assert s1.tokens == s2.tokens and s1.nll_sum == pytest.approx(s2.nll_sum, rel=1e-5)


def test_report_round_trip():
    r = MetricReport(3.5, 71.25, 12.0, 10, 80, phase="finetuned", experiment="x", mode="transfer",
                     upstream_samples=10_000, pretrain_steps=2500)
    assert MetricReport.from_json(r.to_json()) == r
    assert r.tsv_row() == "x\t3.50\t71.2\t12.0"
    assert r.to_dict()["perplexity_base"] == "e"


def _tiny_setup(pairs):
    corpus = from_pairs(pairs)
    sv, tv = build_vocab(corpus.sources), build_vocab(corpus.targets)
    model = build_model(ModelConfig(layers=1, heads=2, d_model=8, d_ffn=16, max_positions=32), sv.size, tv.size)
    return corpus, sv, tv, model


def test_evaluate_full_composes_sub_metrics():
    corpus, sv, tv, model = _tiny_setup([("list files", "ls -l"), ("disk usage", "du -sh ."), ("show", "ls")])
    with pytest.raises(PhaseError):
        evaluate_full(model, corpus, sv, tv)
    model.phase = "finetuned"
    report = evaluate_full(model, corpus, sv, tv, DecodeConfig(max_len=6), target_language="bash")
    assert report.perplexity == pytest.approx(perplexity(model, corpus, sv, tv))
    assert report.accuracy_pct == pytest.approx(token_accuracy(model, corpus, sv, tv))
    assert -100.0 <= report.bash_score <= 100.0
    assert report.examples == 3 and report.target_tokens == 9
    assert report.phase == "finetuned" and report.decode_max_len == 6
    assert len(report.details) == 3
    again = evaluate_full(model, corpus, sv, tv, DecodeConfig(max_len=6), target_language="bash")
    assert again == report and again.details == report.details


def test_non_bash_targets_use_exact_match():
    corpus, sv, tv, model = _tiny_setup([("a b", "c d"), ("b", "d")])
    report = evaluate_full(model, corpus, sv, tv, target_language="other", allow_any_phase=True)
    assert report.bash_metric == EXACT_MATCH_FALLBACK
    assert report.bash_score in (0.0, 50.0, 100.0)
