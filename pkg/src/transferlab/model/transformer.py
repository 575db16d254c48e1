"""Pre-norm transformer encoder-decoder split into a core and an embedding layer.

Tensor inventory (d = d_model, f = d_ffn, V_s / V_t = vocab sizes):

core
    ``positional``                      (max_positions, d), sinusoidal, never trained
    ``enc.{i}.ln1.{gain,bias}``         (d,)
    ``enc.{i}.self.{wq,wk,wv,wo}``      (d, d)   and ``b{q,k,v,o}`` (d,)
    ``enc.{i}.ln2.{gain,bias}``         (d,)
    ``enc.{i}.ff.w1`` (d, f), ``b1`` (f,), ``w2`` (f, d), ``b2`` (d,)
    ``dec.{i}.*``                       as enc, plus ``cross.*`` attention and ``ln3``
    ``enc.ln_f.*`` / ``dec.ln_f.*``     final norms
embeddings
    ``src_embed`` (V_s, d)
    ``tgt_embed`` (V_t, d), doubling as the output projection
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from transferlab.autodiff import (
    Tensor,
    add,
    dropout,
    embedding_lookup,
    layer_norm,
    matmul,
    no_grad,
    relu,
    reshape,
    scale,
    softmax_row,
    transpose,
    uniform_init,
    xavier_init,
)
from transferlab.errors import InvalidArgument, InvalidConfig, PhaseError, SequenceTooLong
from transferlab.vocab import BOS, EOS, PAD

PHASES = ("initialized", "pretrained", "finetuned")
FIXED_TENSORS = frozenset({"positional"})
_NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 6
    heads: int = 8
    d_model: int = 512
    d_ffn: int = 2048
    dropout: float = 0.1
    label_smoothing: float = 0.1
    max_positions: int = 256

    def __post_init__(self):
        for name in ("layers", "heads", "d_model", "d_ffn", "max_positions"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        if self.d_model % self.heads:
            raise InvalidConfig(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfig("dropout must lie in [0, 1)")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise InvalidConfig("label_smoothing must lie in [0, 1)")

    @classmethod
    def desk(cls, **overrides) -> ModelConfig:
        """Small config that trains in minutes on one CPU core."""
        base = dict(layers=2, heads=4, d_model=64, d_ffn=128, max_positions=64)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def full(cls, **overrides) -> ModelConfig:
        return cls(**overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


def sinusoidal_positions(n_positions: int, d_model: int) -> np.ndarray:
    pos = np.arange(n_positions)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((n_positions, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table


def _core_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, f = config.d_model, config.d_ffn
    shapes: list[tuple[str, tuple[int, ...]]] = []

    def norm(prefix):
        shapes.extend([(f"{prefix}.gain", (d,)), (f"{prefix}.bias", (d,))])

    def attention(prefix):
        for w in ("q", "k", "v", "o"):
            shapes.extend([(f"{prefix}.w{w}", (d, d)), (f"{prefix}.b{w}", (d,))])

    def ff(prefix):
        shapes.extend([(f"{prefix}.w1", (d, f)), (f"{prefix}.b1", (f,)),
                       (f"{prefix}.w2", (f, d)), (f"{prefix}.b2", (d,))])

    for i in range(config.layers):
        norm(f"enc.{i}.ln1")
        attention(f"enc.{i}.self")
        norm(f"enc.{i}.ln2")
        ff(f"enc.{i}.ff")
    norm("enc.ln_f")
    for i in range(config.layers):
        norm(f"dec.{i}.ln1")
        attention(f"dec.{i}.self")
        norm(f"dec.{i}.ln2")
        attention(f"dec.{i}.cross")
        norm(f"dec.{i}.ln3")
        ff(f"dec.{i}.ff")
    norm("dec.ln_f")
    return shapes


def _subseed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def _init_weight(shape, seed, init: str, half_width: float, dtype) -> Tensor:
    if init == "xavier":
        return xavier_init(shape, seed, dtype=dtype)
    if init == "uniform":
        return uniform_init(shape, seed, half_width, dtype=dtype)
    raise InvalidArgument(f"unknown init scheme {init!r}")


class PartitionedModel:
    """All tensors of the model, keyed by name, in two disjoint groups."""

    def __init__(self, config: ModelConfig, core: dict[str, Tensor], embeddings: dict[str, Tensor],
                 phase: str = "initialized", step: int = 0, vocab_hashes: dict[str, str] | None = None,
                 extra: dict | None = None):
        if phase not in PHASES:
            raise InvalidArgument(f"unknown phase {phase!r}")
        overlap = set(core) & set(embeddings)
        if overlap:
            raise InvalidArgument(f"tensors in both partitions: {sorted(overlap)}")
        self.config = config
        self.core = core
        self.embeddings = embeddings
        self.phase = phase
        self.step = step
        self.vocab_hashes = dict(vocab_hashes or {})
        self.extra = dict(extra or {})
        self.core["positional"].requires_grad = False

    @property
    def src_embed(self) -> Tensor:
        return self.embeddings["src_embed"]

    @property
    def tgt_embed(self) -> Tensor:
        return self.embeddings["tgt_embed"]

    @property
    def output_projection(self) -> Tensor:
        # tied: the very same Tensor object as the target embedding table
        return self.embeddings["tgt_embed"]

    @property
    def src_vocab_size(self) -> int:
        return self.src_embed.shape[0]

    @property
    def tgt_vocab_size(self) -> int:
        return self.tgt_embed.shape[0]

    def named_tensors(self) -> dict[str, Tensor]:
        return {**self.core, **self.embeddings}

    def parameters(self) -> dict[str, Tensor]:
        """Every learnable tensor (fixed positional table excluded)."""
        return {k: t for k, t in self.named_tensors().items() if k not in FIXED_TENSORS}

    def partition_of(self, name: str) -> str:
        if name in self.core:
            return "core"
        if name in self.embeddings:
            return "embeddings"
        raise KeyError(name)

    @property
    def trainable_mask(self) -> dict[str, bool]:
        return {k: t.requires_grad for k, t in self.parameters().items()}

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.parameters().values()))

    # ------------------------------------------------------------------
    # forward pass

    def _check_lengths(self, n: int, what: str) -> None:
        if n > self.config.max_positions:
            raise SequenceTooLong(f"{what} length {n} exceeds max_positions {self.config.max_positions}")

    def _embed(self, table: Tensor, ids: np.ndarray, drop) -> Tensor:
        n = ids.shape[1]
        x = scale(embedding_lookup(table, ids), math.sqrt(self.config.d_model))
        pos = Tensor(self.core["positional"].data[:n])
        return drop(add(x, pos))

    def _linear(self, x: Tensor, prefix: str, w: str, b: str) -> Tensor:
        return add(matmul(x, self.core[f"{prefix}.{w}"]), self.core[f"{prefix}.{b}"])

    def _norm(self, x: Tensor, prefix: str) -> Tensor:
        return layer_norm(x, self.core[f"{prefix}.gain"], self.core[f"{prefix}.bias"])

    def _attention(self, prefix: str, q_in: Tensor, kv_in: Tensor, mask: Tensor, drop) -> Tensor:
        h = self.config.heads
        b, t, d = q_in.shape
        s = kv_in.shape[1]
        dk = d // h
        q = transpose(reshape(self._linear(q_in, prefix, "wq", "bq"), (b, t, h, dk)), (0, 2, 1, 3))
        k_t = transpose(reshape(self._linear(kv_in, prefix, "wk", "bk"), (b, s, h, dk)), (0, 2, 3, 1))
        v = transpose(reshape(self._linear(kv_in, prefix, "wv", "bv"), (b, s, h, dk)), (0, 2, 1, 3))
        scores = add(scale(matmul(q, k_t), 1.0 / math.sqrt(dk)), mask)
        weights = drop(softmax_row(scores))
        ctx = reshape(transpose(matmul(weights, v), (0, 2, 1, 3)), (b, t, d))
        return self._linear(ctx, prefix, "wo", "bo")

    def _feedforward(self, x: Tensor, prefix: str, drop) -> Tensor:
        hidden = drop(relu(self._linear(x, prefix, "w1", "b1")))
        return self._linear(hidden, prefix, "w2", "b2")

    def _dropper(self, training: bool, rng: np.random.Generator | None):
        keep = 1.0 - self.config.dropout
        if not training or keep == 1.0:
            return lambda x: x
        if rng is None:
            rng = np.random.default_rng(0)
        return lambda x: dropout(x, keep, rng, training=True)

    def _key_mask(self, valid: np.ndarray) -> Tensor:
        """Additive (B, 1, 1, S) mask from a boolean validity array."""
        dtype = self.src_embed.dtype
        m = np.where(valid, 0.0, _NEG_INF).astype(dtype)
        return Tensor(m[:, None, None, :])

    def encode(self, src_ids: np.ndarray, src_valid: np.ndarray, training: bool = False,
               rng: np.random.Generator | None = None) -> Tensor:
        drop = self._dropper(training, rng)
        self._check_lengths(src_ids.shape[1], "source")
        mask = self._key_mask(src_valid)
        x = self._embed(self.src_embed, src_ids, drop)
        for i in range(self.config.layers):
            p = f"enc.{i}"
            a = self._norm(x, f"{p}.ln1")
            x = add(x, drop(self._attention(f"{p}.self", a, a, mask, drop)))
            x = add(x, drop(self._feedforward(self._norm(x, f"{p}.ln2"), f"{p}.ff", drop)))
        return self._norm(x, "enc.ln_f")

    def decode_logits(self, memory: Tensor, src_valid: np.ndarray, tgt_in_ids: np.ndarray,
                      tgt_valid: np.ndarray, training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        drop = self._dropper(training, rng)
        b, t = tgt_in_ids.shape
        self._check_lengths(t, "target")
        causal = np.tril(np.ones((t, t), dtype=bool))
        self_valid = causal[None, :, :] & tgt_valid[:, None, :]
        dtype = self.tgt_embed.dtype
        self_mask = Tensor(np.where(self_valid, 0.0, _NEG_INF).astype(dtype)[:, None, :, :])
        cross_mask = self._key_mask(src_valid)
        y = self._embed(self.tgt_embed, tgt_in_ids, drop)
        for i in range(self.config.layers):
            p = f"dec.{i}"
            a = self._norm(y, f"{p}.ln1")
            y = add(y, drop(self._attention(f"{p}.self", a, a, self_mask, drop)))
            c = self._norm(y, f"{p}.ln2")
            y = add(y, drop(self._attention(f"{p}.cross", c, memory, cross_mask, drop)))
            y = add(y, drop(self._feedforward(self._norm(y, f"{p}.ln3"), f"{p}.ff", drop)))
        y = self._norm(y, "dec.ln_f")
        return matmul(y, transpose(self.output_projection, (1, 0)))

    def forward(self, src_ids, tgt_in_ids, src_lengths=None, tgt_lengths=None, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        src_ids = np.asarray(src_ids, dtype=np.int64)
        tgt_in_ids = np.asarray(tgt_in_ids, dtype=np.int64)
        src_valid = _validity(src_ids, src_lengths)
        tgt_valid = _validity(tgt_in_ids, tgt_lengths)
        memory = self.encode(src_ids, src_valid, training, rng)
        return self.decode_logits(memory, src_valid, tgt_in_ids, tgt_valid, training, rng)

    def teacher_forced_logits(self, src_ids, tgt_in_ids) -> np.ndarray:
        """Eval-mode logits as a plain array, (batch, positions, V_t)."""
        with no_grad():
            return self.forward(src_ids, tgt_in_ids).data


def _validity(ids: np.ndarray, lengths) -> np.ndarray:
    if lengths is None:
        return ids != PAD
    lengths = np.asarray(lengths)
    return np.arange(ids.shape[1])[None, :] < lengths[:, None]


# ----------------------------------------------------------------------
# construction and partition surgery


def build_model(config: ModelConfig, src_vocab_size: int, tgt_vocab_size: int, init: str = "xavier",
                seed: int = 0, half_width: float = 0.1, dtype=np.float32) -> PartitionedModel:
    """Fresh model: weight matrices per ``init``, biases 0, norm gains 1."""
    core: dict[str, Tensor] = {
        "positional": Tensor(sinusoidal_positions(config.max_positions, config.d_model).astype(dtype)),
    }
    for index, (name, shape) in enumerate(_core_shapes(config)):
        if name.endswith(".gain"):
            core[name] = Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
        elif len(shape) == 1:
            core[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        else:
            core[name] = _init_weight(shape, _subseed(seed, index), init, half_width, dtype)
    embeddings = _fresh_embeddings(config, src_vocab_size, tgt_vocab_size, seed, init, half_width, dtype)
    return PartitionedModel(config, core, embeddings, phase="initialized",
                            extra={"init": init, "half_width": half_width if init == "uniform" else None})


def _fresh_embeddings(config, src_vocab_size, tgt_vocab_size, seed, init="xavier", half_width=0.1,
                      dtype=np.float32) -> dict[str, Tensor]:
    if src_vocab_size < 1 or tgt_vocab_size < 1:
        raise InvalidConfig("vocab sizes must be positive")
    d = config.d_model
    return {
        "src_embed": _init_weight((src_vocab_size, d), _subseed(seed, 1_000_001), init, half_width, dtype),
        "tgt_embed": _init_weight((tgt_vocab_size, d), _subseed(seed, 1_000_002), init, half_width, dtype),
    }


def swap_embeddings(model: PartitionedModel, new_src_vocab_size: int, new_tgt_vocab_size: int,
                    seed: int, allow_unpretrained: bool = False) -> PartitionedModel:
    """Keep the core bit-for-bit, replace both embedding tables with fresh Xavier ones."""
    if model.phase != "pretrained" and not (allow_unpretrained and model.phase == "initialized"):
        raise PhaseError(f"swap_embeddings needs a pretrained model, got phase {model.phase!r}")
    core = {k: Tensor(t.data.copy(), requires_grad=t.requires_grad) for k, t in model.core.items()}
    dtype = model.src_embed.dtype
    embeddings = _fresh_embeddings(model.config, new_src_vocab_size, new_tgt_vocab_size, seed, dtype=dtype)
    return PartitionedModel(model.config, core, embeddings, phase=model.phase, step=model.step,
                            extra=dict(model.extra))


def set_trainable(model: PartitionedModel, partition: str, flag: bool) -> PartitionedModel:
    if partition == "core":
        groups: Iterable[dict[str, Tensor]] = (model.core,)
    elif partition == "embeddings":
        groups = (model.embeddings,)
    elif partition == "all":
        groups = (model.core, model.embeddings)
    else:
        raise InvalidArgument(f"unknown partition {partition!r}")
    for group in groups:
        for name, t in group.items():
            if name not in FIXED_TENSORS:
                t.requires_grad = bool(flag)
    return model


def core_checksum(model: PartitionedModel) -> str:
    h = hashlib.sha256()
    for name in sorted(model.core):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.core[name].data).tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------------
# decoding


def pad_batch(seqs: Sequence[Sequence[int]], pad_id: int = PAD) -> np.ndarray:
    width = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), max(width, 1)), pad_id, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def greedy_decode(model: PartitionedModel, src_ids: Sequence[Sequence[int]], max_len: int) -> list[list[int]]:
    """Argmax decoding from BOS until EOS or ``max_len`` generated tokens.

    ``src_ids`` is a batch of id sequences (EOS-terminated, unpadded).  Returned
    sequences exclude BOS and the terminating EOS.
    """
    if max_len < 1:
        raise InvalidArgument(f"max_len must be at least 1, got {max_len}")
    if not len(src_ids):
        return []
    max_len = min(max_len, model.config.max_positions)
    src = pad_batch(src_ids)
    lengths = np.array([len(s) for s in src_ids])
    src_valid = _validity(src, lengths)
    batch = len(src_ids)
    ys = np.full((batch, 1), BOS, dtype=np.int64)
    finished = np.zeros(batch, dtype=bool)
    with no_grad():
        memory = model.encode(src, src_valid)
        for _ in range(max_len):
            logits = model.decode_logits(memory, src_valid, ys, np.ones_like(ys, dtype=bool)).data
            nxt = logits[:, -1, :].argmax(axis=-1)
            nxt = np.where(finished, PAD, nxt)
            ys = np.concatenate([ys, nxt[:, None]], axis=1)
            finished |= nxt == EOS
            if finished.all():
                break
    out = []
    for row in ys[:, 1:]:
        seq = []
        for tok in row:
            if tok == EOS or tok == PAD:
                break
            seq.append(int(tok))
        out.append(seq)
    return out
