"""Bitext corpora: synthetic generators, file ingestion, and preprocessing transforms.

Every corpus carries the list of steps that produced it, and ``replay`` rebuilds
an identical corpus from that list.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from transferlab.errors import (
    EmptyCorpus,
    InvalidArgument,
    ParseError,
    TooSmallToSplit,
)

Pair = tuple[tuple[str, ...], tuple[str, ...]]
FORMATS = ("tsv", "jsonl")


@dataclass(frozen=True)
class BitextCorpus:
    pairs: tuple[Pair, ...]
    task: str = ""
    seed: int | None = None
    history: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self):
        for i, (src, tgt) in enumerate(self.pairs):
            if not src and not tgt:
                raise InvalidArgument(f"pair {i} has an empty source and an empty target")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def sources(self) -> list[str]:
        return [" ".join(s) for s, _ in self.pairs]

    @property
    def targets(self) -> list[str]:
        return [" ".join(t) for _, t in self.pairs]

    def derive(self, pairs, step: dict, **changes) -> BitextCorpus:
        return BitextCorpus(tuple(pairs), changes.get("task", self.task), changes.get("seed", self.seed),
                            self.history + (step,))


def _check_gen_args(n, vocab_size, len_min, len_max):
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    if vocab_size < 2:
        raise InvalidArgument("vocab_size must be at least 2")
    if not 1 <= len_min <= len_max:
        raise InvalidArgument(f"need 1 <= len_min <= len_max, got {len_min}, {len_max}")


def _random_sources(rng: np.random.Generator, n, vocab_size, len_min, len_max) -> list[np.ndarray]:
    lengths = rng.integers(len_min, len_max + 1, size=n)
    return [rng.integers(0, vocab_size, size=int(k)) for k in lengths]


def synthetic_tokens(vocab_size: int, prefix: str = "w") -> list[str]:
    return [f"{prefix}{i}" for i in range(vocab_size)]


def gen_copy(n: int = 10_000, vocab_size: int = 50, len_min: int = 3, len_max: int = 12, seed: int = 0,
             prefix: str = "w", identity: bool = False, perm_seed: int | None = None) -> BitextCorpus:
    """Random sources paired with their image under a seeded token permutation.

    By default ``seed`` drives both the permutation and the sampling.  Passing
    ``perm_seed`` draws the permutation from it instead, so two corpora can
    share one map while holding different sentences.
    """
    _check_gen_args(n, vocab_size, len_min, len_max)
    rng = np.random.default_rng(seed)
    perm_rng = rng if perm_seed is None else np.random.default_rng(perm_seed)
    perm = np.arange(vocab_size) if identity else perm_rng.permutation(vocab_size)
    toks = synthetic_tokens(vocab_size, prefix)
    pairs = []
    for src in _random_sources(rng, n, vocab_size, len_min, len_max):
        pairs.append((tuple(toks[i] for i in src), tuple(toks[i] for i in perm[src])))
    step = dict(op="gen_copy", n=n, vocab_size=vocab_size, len_min=len_min, len_max=len_max, seed=seed,
                prefix=prefix, identity=identity, perm_seed=perm_seed)
    return BitextCorpus(tuple(pairs), "copy", seed, (step,))


def copy_permutation(corpus: BitextCorpus) -> dict[str, str]:
    """Recover the token map of a copy corpus (raises if it is not pointwise)."""
    mapping: dict[str, str] = {}
    for src, tgt in corpus.pairs:
        if len(src) != len(tgt):
            raise InvalidArgument("length mismatch: not a pointwise map")
        for a, b in zip(src, tgt):
            if mapping.setdefault(a, b) != b:
                raise InvalidArgument(f"token {a!r} maps to both {mapping[a]!r} and {b!r}")
    return mapping


def gen_reversal(n: int = 10_000, vocab_size: int = 50, len_min: int = 3, len_max: int = 12, seed: int = 0,
                 prefix: str = "w") -> BitextCorpus:
    _check_gen_args(n, vocab_size, len_min, len_max)
    rng = np.random.default_rng(seed)
    toks = synthetic_tokens(vocab_size, prefix)
    pairs = []
    for src in _random_sources(rng, n, vocab_size, len_min, len_max):
        words = tuple(toks[i] for i in src)
        pairs.append((words, words[::-1]))
    step = dict(op="gen_reversal", n=n, vocab_size=vocab_size, len_min=len_min, len_max=len_max, seed=seed,
                prefix=prefix)
    return BitextCorpus(tuple(pairs), "reversal", seed, (step,))


def from_pairs(pairs: Sequence[tuple[str | Sequence[str], str | Sequence[str]]], task: str = "inline"
               ) -> BitextCorpus:
    def toks(x):
        return tuple(x.split()) if isinstance(x, str) else tuple(x)

    return BitextCorpus(tuple((toks(s), toks(t)) for s, t in pairs), task, None,
                        (dict(op="from_pairs", task=task),))


# ---------------------------------------------------------------------------
# ingestion / export


def _read_rows(path: Path, fmt: str) -> list[tuple[str, str]]:
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if fmt == "tsv":
                cells = line.split("\t")
                if len(cells) != 2:
                    raise ParseError(f"expected 'source<TAB>target', found {len(cells) - 1} tabs", line=lineno)
                src, tgt = cells
            else:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"invalid JSON: {exc.msg}", line=lineno) from exc
                if not isinstance(obj, dict):
                    raise ParseError("row is not a JSON object", line=lineno)
                src, tgt = obj.get("source"), obj.get("target")
                if not isinstance(src, str) or not isinstance(tgt, str):
                    raise ParseError("row needs string fields 'source' and 'target'", line=lineno)
            if not src.split() and not tgt.split():
                raise ParseError("empty source and empty target", line=lineno)
            rows.append((src, tgt))
    return rows


def load_bitext(path: str | Path, format: str = "tsv") -> BitextCorpus:  # noqa: A002
    if format not in FORMATS:
        raise InvalidArgument(f"format must be one of {FORMATS}, got {format!r}")
    path = Path(path)
    rows = _read_rows(path, format)
    if not rows:
        raise EmptyCorpus(f"{path} holds no pairs")
    pairs = tuple((tuple(s.split()), tuple(t.split())) for s, t in rows)
    return BitextCorpus(pairs, path.stem, None, (dict(op="load_bitext", path=str(path), format=format),))


def save_bitext(corpus: BitextCorpus, path: str | Path, format: str = "tsv") -> None:  # noqa: A002
    if format not in FORMATS:
        raise InvalidArgument(f"format must be one of {FORMATS}, got {format!r}")
    with Path(path).open("w", encoding="utf-8") as fh:
        for src, tgt in corpus.pairs:
            s, t = " ".join(src), " ".join(tgt)
            if format == "tsv":
                fh.write(f"{s}\t{t}\n")
            else:
                fh.write(json.dumps({"source": s, "target": t}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# transforms

_NUMBER = re.compile(r"(?<![\w.])[-+]?\d+(?:\.\d+)?(?![\w.])")


def _mask_numbers(segment: str) -> str:
    return _NUMBER.sub("<num>", segment)


def mask_sql_constants(query: str) -> str:
    """Replace quoted string literals by ``<str>`` and numeric literals by ``<num>``.

    Quotes are scanned first so digits inside strings never become ``<num>``.
    A doubled quote or a backslash escapes the quote character inside a literal.
    """
    out: list[str] = []
    i, plain_start, n = 0, 0, len(query)
    while i < n:
        ch = query[i]
        if ch not in "'\"":
            i += 1
            continue
        out.append(_mask_numbers(query[plain_start:i]))
        j = i + 1
        while True:
            if j >= n:
                raise ParseError(f"unterminated {ch} literal starting at column {i + 1}")
            if query[j] == "\\":
                j += 2
                continue
            if query[j] == ch:
                if j + 1 < n and query[j + 1] == ch:
                    j += 2
                    continue
                break
            j += 1
        out.append("<str>")
        i = plain_start = j + 1
    out.append(_mask_numbers(query[plain_start:]))
    return "".join(out)


def mask_sql_corpus(corpus: BitextCorpus, side: str = "target") -> BitextCorpus:
    """Apply constant masking to one side of a corpus (the SQL side)."""
    if side not in ("source", "target"):
        raise InvalidArgument(f"side must be 'source' or 'target', got {side!r}")
    pairs = []
    for src, tgt in corpus.pairs:
        if side == "source":
            src = tuple(mask_sql_constants(" ".join(src)).split())
        else:
            tgt = tuple(mask_sql_constants(" ".join(tgt)).split())
        pairs.append((src, tgt))
    return corpus.derive(pairs, dict(op="mask_sql", side=side))


def swap_direction(corpus: BitextCorpus) -> BitextCorpus:
    return corpus.derive(((t, s) for s, t in corpus.pairs), dict(op="swap_direction"))


def downsample(corpus: BitextCorpus, n: int, seed: int) -> BitextCorpus:
    """Uniform n-subset without replacement, original order kept; identity if n >= size."""
    if n < 1:
        raise InvalidArgument("n must be at least 1")
    step = dict(op="downsample", n=n, seed=seed)
    if n >= len(corpus):
        return corpus.derive(corpus.pairs, step)
    keep = np.sort(np.random.default_rng(seed).choice(len(corpus), size=n, replace=False))
    return corpus.derive((corpus.pairs[i] for i in keep), step)


def held_out_count(size: int, test_fraction: float) -> int:
    # round half up, then keep both sides non-empty
    k = int(math.floor(test_fraction * size + 0.5))
    return min(max(k, 1), size - 1)


def split(corpus: BitextCorpus, test_fraction: float, seed: int) -> tuple[BitextCorpus, BitextCorpus]:
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgument(f"test_fraction must lie in (0, 1), got {test_fraction}")
    if len(corpus) < 2:
        raise TooSmallToSplit(f"cannot split a corpus of {len(corpus)} pairs")
    k = held_out_count(len(corpus), test_fraction)
    order = np.random.default_rng(seed).permutation(len(corpus))
    test_idx = np.sort(order[:k])
    train_idx = np.sort(order[k:])
    base = dict(op="split", test_fraction=test_fraction, seed=seed)
    train = corpus.derive((corpus.pairs[i] for i in train_idx), {**base, "part": "train"})
    test = corpus.derive((corpus.pairs[i] for i in test_idx), {**base, "part": "test"})
    return train, test


# ---------------------------------------------------------------------------
# replay

_GENERATORS = {"gen_copy": gen_copy, "gen_reversal": gen_reversal}


def replay(history: Sequence[dict], corpus: BitextCorpus | None = None) -> BitextCorpus:
    """Rebuild a corpus from its recorded steps.

    Histories that start from ``from_pairs`` need the original inline corpus.
    """
    for step in history:
        args = {k: v for k, v in step.items() if k != "op"}
        op = step["op"]
        if op in _GENERATORS:
            corpus = _GENERATORS[op](**args)
        elif op == "load_bitext":
            corpus = load_bitext(args["path"], args["format"])
        elif op == "from_pairs":
            if corpus is None:
                raise InvalidArgument("replaying from_pairs needs the original corpus")
            corpus = BitextCorpus(corpus.pairs, corpus.task, None, (step,))
        elif corpus is None:
            raise InvalidArgument(f"history step {op!r} has no input corpus")
        elif op == "mask_sql":
            corpus = mask_sql_corpus(corpus, args["side"])
        elif op == "swap_direction":
            corpus = swap_direction(corpus)
        elif op == "downsample":
            corpus = downsample(corpus, args["n"], args["seed"])
        elif op == "split":
            train, test = split(corpus, args["test_fraction"], args["seed"])
            corpus = train if args["part"] == "train" else test
        else:
            raise InvalidArgument(f"unknown history step {op!r}")
    if corpus is None:
        raise InvalidArgument("empty history")
    return corpus
