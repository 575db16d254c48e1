"""Structural parsing of Bash commands and the Bash similarity heuristic.

The grammar is deliberately lexical: a command is split into pipeline stages
on unquoted ``|``; in each stage the first word is the utility, unquoted words
starting with ``-`` are flags, everything else is an argument.  Redirections,
``&&``, ``;`` and substitutions get no special treatment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from transferlab.errors import EmptyCommand, InvalidArgument, ParseError, ReferenceInvalid

SCORE_VERSION = "bash-sim-v1"

# utilities whose options are whole words behind a single dash ("find -name"),
# so "-name" must not be read as the bundle {-n, -a, -m, -e}
SINGLE_DASH_LONG_OPTIONS = frozenset({
    "find", "java", "javac", "gcc", "g++", "cc", "clang", "ffmpeg", "convert", "mogrify",
    "identify", "openssl", "ip", "xmlstarlet", "qemu-img",
})

_BUNDLE = re.compile(r"-[A-Za-z]{2,}")
_SAFE_WORD = re.compile(r"[A-Za-z0-9_./=:,+@%^{}\[\]~-]+")


@dataclass(frozen=True)
class Command:
    utility: str
    flags: frozenset[str]
    args: tuple[str, ...]


@dataclass(frozen=True)
class BashAST:
    stages: tuple[Command, ...]


@dataclass(frozen=True)
class SimilarityScore:
    value: float
    per_slot: tuple[float, ...]


def _lex(command: str) -> list[list[tuple[str, bool]]]:
    """Split into stages of (word, was_quoted) pairs."""
    stages: list[list[tuple[str, bool]]] = [[]]
    buf: list[str] = []
    in_word = quoted = False
    i, n = 0, len(command)

    def flush():
        nonlocal buf, in_word, quoted
        if in_word:
            stages[-1].append(("".join(buf), quoted))
        buf, in_word, quoted = [], False, False

    while i < n:
        ch = command[i]
        if ch.isspace():
            flush()
            i += 1
        elif ch == "|":
            flush()
            stages.append([])
            i += 1
        elif ch == "\\":
            in_word = quoted = True
            if i + 1 < n:
                buf.append(command[i + 1])
            else:
                buf.append("\\")
            i += 2
        elif ch == "'":
            end = command.find("'", i + 1)
            if end < 0:
                raise ParseError(f"unbalanced single quote at column {i + 1}")
            buf.append(command[i + 1 : end])
            in_word = quoted = True
            i = end + 1
        elif ch == '"':
            j = i + 1
            while j < n and command[j] != '"':
                if command[j] == "\\" and j + 1 < n and command[j + 1] in '\\"$`\n':
                    buf.append(command[j + 1])
                    j += 2
                    continue
                buf.append(command[j])
                j += 1
            if j >= n:
                raise ParseError(f"unbalanced double quote at column {i + 1}")
            in_word = quoted = True
            i = j + 1
        else:
            buf.append(ch)
            in_word = True
            i += 1
    flush()
    return stages


def _stage(words: list[tuple[str, bool]]) -> Command:
    utility = words[0][0]
    if not utility:
        raise ParseError("empty utility name")
    bundles = utility not in SINGLE_DASH_LONG_OPTIONS
    flags: set[str] = set()
    args: list[str] = []
    options_done = False
    for word, was_quoted in words[1:]:
        if options_done or was_quoted or not word.startswith("-") or word == "-":
            args.append(word)
        elif word == "--":
            options_done = True
            args.append(word)
        elif word.startswith("--"):
            name, eq, value = word.partition("=")
            if name == "--":
                flags.add(word)
            else:
                flags.add(name)
                if eq:
                    args.append(value)
        elif bundles and _BUNDLE.fullmatch(word):
            flags.update(f"-{c}" for c in word[1:])
        else:
            flags.add(word)
    return Command(utility, frozenset(flags), tuple(args))


def parse_bash(command: str) -> BashAST:
    if not command or not command.strip():
        raise EmptyCommand("empty command")
    stages = _lex(command)
    if any(not words for words in stages):
        raise ParseError("empty pipeline stage")
    return BashAST(tuple(_stage(words) for words in stages))


def _quote(word: str, as_argument: bool) -> str:
    if word and _SAFE_WORD.fullmatch(word) and not (as_argument and word.startswith("-")):
        return word
    return "'" + word.replace("'", "'\"'\"'") + "'"


def render(ast: BashAST) -> str:
    """Serialise back to a command line that parses to the same AST.

    Flags are emitted in sorted order ahead of the arguments, so the text may
    differ from the original even though the structure does not.
    """
    parts = []
    for cmd in ast.stages:
        words = [_quote(cmd.utility, as_argument=False)]
        words.extend(sorted(cmd.flags))
        words.extend(_quote(a, as_argument=True) for a in cmd.args)
        parts.append(" ".join(words))
    return " | ".join(parts)


def _slot_score(pred: Command | None, ref: Command | None) -> float:
    if pred is None or ref is None or pred.utility != ref.utility:
        return -100.0
    union = pred.flags | ref.flags
    if not union:
        return 100.0
    shared = len(pred.flags & ref.flags)
    differing = len(pred.flags ^ ref.flags)
    return 50.0 * (1.0 + (shared - differing) / len(union))


def bash_similarity(prediction: str, reference: str) -> SimilarityScore:
    """Score a predicted command against a reference on [-100, 100].

    Stages are aligned by position.  A slot scores -100 when either side lacks
    a stage there or the utilities differ; otherwise it scores from the flag
    overlap.  Arguments are ignored.  An unparseable prediction scores -100.
    """
    try:
        ref = parse_bash(reference)
    except ParseError as exc:
        raise ReferenceInvalid(f"reference does not parse: {exc}") from exc
    try:
        pred = parse_bash(prediction)
    except ParseError:
        return SimilarityScore(-100.0, (-100.0,))
    slots = max(len(pred.stages), len(ref.stages))
    per_slot = tuple(
        _slot_score(
            pred.stages[i] if i < len(pred.stages) else None,
            ref.stages[i] if i < len(ref.stages) else None,
        )
        for i in range(slots)
    )
    return SimilarityScore(sum(per_slot) / slots, per_slot)


def bash_corpus_score(predictions: Sequence[str], references: Sequence[str]) -> float:
    if len(predictions) != len(references):
        raise InvalidArgument(f"{len(predictions)} predictions vs {len(references)} references")
    if not references:
        raise InvalidArgument("need at least one pair")
    total = 0.0
    for p, r in zip(predictions, references):
        total += bash_similarity(p, r).value
    return total / len(references)
