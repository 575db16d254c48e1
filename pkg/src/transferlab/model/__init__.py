from transferlab.model.checkpoint import (
    checkpoint_bytes,
    checkpoint_from_bytes,
    load_checkpoint,
    save_checkpoint,
)
from transferlab.model.transformer import (
    FIXED_TENSORS,
    PHASES,
    ModelConfig,
    PartitionedModel,
    build_model,
    core_checksum,
    greedy_decode,
    pad_batch,
    set_trainable,
    sinusoidal_positions,
    swap_embeddings,
)

__all__ = [
    "FIXED_TENSORS", "PHASES", "ModelConfig", "PartitionedModel", "build_model",
    "checkpoint_bytes", "checkpoint_from_bytes", "core_checksum", "greedy_decode",
    "load_checkpoint", "pad_batch", "save_checkpoint", "set_trainable",
    "sinusoidal_positions", "swap_embeddings",
]
