"""Turning corpora into padded id arrays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from transferlab.tasks import BitextCorpus
from transferlab.vocab import EOS, PAD, Vocab, encode


@dataclass(frozen=True)
class Example:
    src: tuple[int, ...]  # ends with EOS
    tgt: tuple[int, ...]  # BOS ... EOS


def encode_corpus(corpus: BitextCorpus, src_vocab: Vocab, tgt_vocab: Vocab) -> list[Example]:
    return [
        Example(tuple(encode(src_vocab, s)) + (EOS,), tuple(encode(tgt_vocab, t, frame=True)))
        for s, t in corpus.pairs
    ]


def pad(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def collate(examples: Sequence[Example]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(src, decoder input, decoder gold) arrays, PAD-filled."""
    src = pad([e.src for e in examples])
    tgt = pad([e.tgt for e in examples])
    return src, tgt[:, :-1], tgt[:, 1:]


def batches(examples: Sequence[Example], batch_size: int,
            order: Sequence[int] | None = None) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    idx = range(len(examples)) if order is None else order
    idx = list(idx)
    for start in range(0, len(idx), batch_size):
        yield collate([examples[i] for i in idx[start : start + batch_size]])
