"""Checkpoint files: architecture header plus the raw parameter vector.

Layout (little-endian): 4-byte magic ``DEPO``, u32 format version, five u32
architecture fields (vocab_size, d_model, n_layers, n_heads, context), a
u64 parameter count, then the float64 parameter vector. Loading verifies
the magic, version and parameter count; callers that require a specific
architecture pass ``expect`` and get a hard error on mismatch.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import PolicyConfig, PolicyModel

MAGIC = b"DEPO"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIIIQ")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg: PolicyConfig, params: np.ndarray) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    header = _HEADER.pack(MAGIC, VERSION, cfg.vocab_size, cfg.d_model,
                          cfg.n_layers, cfg.n_heads, cfg.context, params.size)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.tobytes())


def load_checkpoint(path, expect: PolicyConfig | None = None):
    """Returns (config, params); rejects foreign files and mismatched configs."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise CheckpointError(f"{path}: truncated checkpoint header")
        magic, version, vocab, d_model, n_layers, n_heads, context, count = \
            _HEADER.unpack(raw)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a policy checkpoint")
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        cfg = PolicyConfig(vocab_size=vocab, d_model=d_model, n_layers=n_layers,
                           n_heads=n_heads, context=context)
        params = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if params.size != count:
        raise CheckpointError(f"{path}: expected {count} parameters, found {params.size}")
    if params.size != PolicyModel(cfg).num_params:
        raise CheckpointError(f"{path}: parameter count does not match the header config")
    if expect is not None and cfg != expect:
        raise CheckpointError(
            f"{path}: checkpoint architecture {cfg} does not match the configured {expect}")
    return cfg, params
