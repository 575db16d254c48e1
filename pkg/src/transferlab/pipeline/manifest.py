"""Experiment manifests: flat YAML files that pin down every choice of a run.

Keys prefixed ``upstream_`` / ``downstream_`` describe the two tasks.  A task is
either generated (``copy``, ``reversal``) or read from a file, then passed
through ``transforms`` in order (``mask_sql_source``, ``mask_sql_target``,
``swap_direction``) and optionally downsampled.  Model keys left as ``null``
take the value of the chosen preset, and so does ``lr``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from transferlab.errors import InvalidConfig
from transferlab.metrics import DecodeConfig
from transferlab.model import ModelConfig
from transferlab.pipeline.train import TrainBudget

MODES = ("transfer", "xavier_init", "uniform_init", "end_to_end")
TASKS = ("copy", "reversal", "file")
TRANSFORMS = ("mask_sql_source", "mask_sql_target", "swap_direction")
PRESET_LR = {"desk": 1e-3, "full": 3e-4}
MODEL_KEYS = ("layers", "heads", "d_model", "d_ffn", "dropout", "label_smoothing", "max_positions")


@dataclass(frozen=True)
class Manifest:
    name: str = "experiment"
    mode: str = "transfer"

    upstream_task: str = "copy"
    upstream_path: str | None = None
    upstream_format: str = "tsv"
    upstream_n: int = 10_000
    upstream_vocab_size: int = 50
    upstream_len_min: int = 3
    upstream_len_max: int = 12
    upstream_prefix: str = "w"
    upstream_seed: int = 0
    upstream_perm_seed: int | None = None
    upstream_transforms: list[str] = field(default_factory=list)
    upstream_downsample: int | None = None

    downstream_task: str = "copy"
    downstream_path: str | None = None
    downstream_format: str = "tsv"
    downstream_n: int = 10_000
    downstream_vocab_size: int = 50
    downstream_len_min: int = 3
    downstream_len_max: int = 12
    downstream_prefix: str = "v"
    downstream_seed: int = 0
    downstream_perm_seed: int | None = None
    downstream_transforms: list[str] = field(default_factory=list)
    downstream_downsample: int | None = None
    downstream_target_language: str = "other"

    test_fraction: float = 0.1
    val_fraction: float = 0.05
    min_freq: int = 1

    model_preset: str = "desk"
    model_layers: int | None = None
    model_heads: int | None = None
    model_d_model: int | None = None
    model_d_ffn: int | None = None
    model_dropout: float | None = None
    model_label_smoothing: float | None = None
    model_max_positions: int | None = None
    init_half_width: float = 0.1

    lr: float | None = None  # preset default: 1e-3 for desk, 3e-4 for full
    warmup_steps: int = 400
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    batch_size: int = 64
    eval_every: int = 250
    pretrain_max_steps: int = 3000
    pretrain_patience: int = 5
    finetune_max_steps: int = 5000
    finetune_patience: int = 5

    decode_max_len: int = 64

    model_seed: int = 0
    embed_seed: int = 1
    split_seed: int = 0
    downsample_seed: int = 0
    order_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.model_preset not in ("desk", "full"):
            raise InvalidConfig(f"model_preset must be 'desk' or 'full', got {self.model_preset!r}")
        if self.downstream_target_language not in ("bash", "other"):
            raise InvalidConfig("downstream_target_language must be 'bash' or 'other'")
        for side in ("upstream", "downstream"):
            task = getattr(self, f"{side}_task")
            if task not in TASKS:
                raise InvalidConfig(f"{side}_task must be one of {TASKS}, got {task!r}")
            if task == "file" and not getattr(self, f"{side}_path"):
                raise InvalidConfig(f"{side}_task is 'file' but {side}_path is not set")
            for t in getattr(self, f"{side}_transforms"):
                if t not in TRANSFORMS:
                    raise InvalidConfig(f"unknown transform {t!r} in {side}_transforms")
        if not 0 < self.test_fraction < 1 or not 0 < self.val_fraction < 1:
            raise InvalidConfig("test_fraction and val_fraction must lie in (0, 1)")
        if self.finetune_max_steps < 1:
            raise InvalidConfig("finetune_max_steps must be at least 1")
        # surface budget and model mistakes at load time rather than mid-run
        self.pretrain_budget()
        self.model_config()
        self.decode_config()

    # -- derived configuration ---------------------------------------------

    def model_config(self) -> ModelConfig:
        overrides = {k: getattr(self, f"model_{k}") for k in MODEL_KEYS if getattr(self, f"model_{k}") is not None}
        preset = ModelConfig.desk if self.model_preset == "desk" else ModelConfig.full
        return preset(**overrides)

    def learning_rate(self) -> float:
        return PRESET_LR[self.model_preset] if self.lr is None else self.lr

    def _budget(self, max_steps: int, patience: int) -> TrainBudget:
        try:
            return TrainBudget(max_steps=max_steps, patience=patience, eval_every=self.eval_every,
                               batch_size=self.batch_size, lr=self.learning_rate(), warmup_steps=self.warmup_steps,
                               beta1=self.beta1, beta2=self.beta2, eps=self.eps)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc

    def pretrain_budget(self) -> TrainBudget:
        return self._budget(self.pretrain_max_steps, self.pretrain_patience)

    def finetune_budget(self) -> TrainBudget:
        return self._budget(self.finetune_max_steps, self.finetune_patience)

    def decode_config(self) -> DecodeConfig:
        try:
            return DecodeConfig("greedy", self.decode_max_len)
        except ValueError as exc:
            raise InvalidConfig(str(exc)) from exc

    def with_changes(self, **changes) -> Manifest:
        return replace(self, **changes)

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml(), encoding="utf-8")

    @classmethod
    def from_dict(cls, data: dict) -> Manifest:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidConfig(f"unknown manifest keys: {', '.join(unknown)}")
        data = dict(data)
        for side in ("upstream", "downstream"):
            key = f"{side}_transforms"
            if isinstance(data.get(key), str):
                data[key] = [data[key]]
            elif data.get(key) is None:
                data.pop(key, None)
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> Manifest:
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise InvalidConfig(f"{path}: not valid YAML ({exc})") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise InvalidConfig(f"{path}: expected a mapping of keys to values")
        manifest = cls.from_dict(data)
        # relative corpus paths are relative to the manifest's directory
        changes = {}
        for side in ("upstream", "downstream"):
            p = getattr(manifest, f"{side}_path")
            if p and not Path(p).is_absolute():
                changes[f"{side}_path"] = str((path.parent / p).resolve())
        return manifest.with_changes(**changes) if changes else manifest
