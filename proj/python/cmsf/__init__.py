"""Spiking cross-modal retrieval: LIF neurons, hard alignment, InfoNCE, energy and training."""

from ._cmsf import (
    AccountingError,
    CheckpointError,
    ConfigError,
    ContractError,
    DatasetError,
    DimensionError,
    DivergenceError,
    Error,
    Model,
    ParameterError,
    StateError,
    UsageError,
    config_keys,
    config_text,
    fine_similarity,
    fusion_invocations,
    infonce,
    layer_energy_pj,
    lif_sequence,
    load_dataset,
    mixed_energy_mj,
    recall_at_k,
    save_dataset,
    similarity,
    sops,
    synth_dataset,
    train,
)

__version__ = "0.1.0"
