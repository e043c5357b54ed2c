"""Flow-model feature-space encryption with orthogonal keys."""

from ._flowcrypt import (
    EncryptionContext,
    Error,
    FlowModel,
    OrthogonalKey,
    audit,
    bits_per_dim,
    build_flow,
    decrypt,
    dlg_linear,
    encrypt,
    load_key,
    load_model,
    make_key,
    sample_key,
    sandwich,
    train,
    tv_empirical,
)

__all__ = [
    "EncryptionContext",
    "Error",
    "FlowModel",
    "OrthogonalKey",
    "audit",
    "bits_per_dim",
    "build_flow",
    "decrypt",
    "dlg_linear",
    "encrypt",
    "load_key",
    "load_model",
    "make_key",
    "sample_key",
    "sandwich",
    "train",
    "tv_empirical",
]
