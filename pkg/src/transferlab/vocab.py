"""Whitespace vocabularies with four reserved special tokens."""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from transferlab.errors import InvalidArgument, InvalidId, ParseError

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<unk>", "<s>", "</s>")
N_SPECIAL = len(SPECIAL_TOKENS)

_HEADER = "# transferlab vocab v1; specials <pad>=0 <unk>=1 <s>=2 </s>=3; token on body line k has id k+4 (k from 0)"


@dataclass(frozen=True)
class Vocab:
    token_of: tuple[str, ...]

    def __post_init__(self):
        if self.token_of[:N_SPECIAL] != SPECIAL_TOKENS:
            raise InvalidArgument("vocab must start with the four special tokens")
        if len(set(self.token_of)) != len(self.token_of):
            raise InvalidArgument("duplicate tokens in vocab")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.token_of)})

    @property
    def id_of(self) -> dict[str, int]:
        return dict(self._ids)

    @property
    def size(self) -> int:
        return len(self.token_of)

    def __len__(self) -> int:
        return len(self.token_of)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def lookup(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def to_text(self) -> str:
        return "\n".join([_HEADER, *self.token_of[N_SPECIAL:]]) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> Vocab:
        lines = text.split("\n")
        if not lines or lines[0] != _HEADER:
            raise ParseError("missing or unrecognised vocab header", line=1)
        if lines[-1] == "":
            lines = lines[:-1]
        return cls(SPECIAL_TOKENS + tuple(lines[1:]))

    @classmethod
    def load(cls, path: str | Path) -> Vocab:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def tokenize(sentence: str | Sequence[str]) -> list[str]:
    if isinstance(sentence, str):
        return sentence.split()
    return list(sentence)


def build_vocab(corpus: Iterable[str | Sequence[str]], min_freq: int = 1) -> Vocab:
    """Ids ordered by descending frequency, ties broken lexicographically."""
    if min_freq < 1:
        raise InvalidArgument(f"min_freq must be positive, got {min_freq}")
    counts = Counter(tok for sent in corpus for tok in tokenize(sent))
    for special in SPECIAL_TOKENS:
        counts.pop(special, None)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(SPECIAL_TOKENS + tuple(kept))


def encode(vocab: Vocab, sentence: str | Sequence[str], frame: bool = False) -> list[int]:
    ids = [vocab.lookup(tok) for tok in tokenize(sentence)]
    if frame:
        ids = [BOS, *ids, EOS]
    return ids


def decode(vocab: Vocab, ids: Iterable[int], keep_specials: bool = False) -> str:
    tokens = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise InvalidId(f"id {i} outside [0, {vocab.size})")
        if i < N_SPECIAL and not keep_specials:
            continue
        tokens.append(vocab.token_of[i])
    return " ".join(tokens)
