"""Baseline and simplified HRED / R-NET assemblies."""

from __future__ import annotations

import numpy as np

from .base import Model
from .batches import DialogueBatch, SpanBatch
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .hred import HRED, HREDOutput, hred_forward
from .layers import (
    NEG_LOGIT,
    GatedAttention,
    Pointer,
    decode_span,
    gated_attention_layer,
    pointer_output,
    self_match_layer,
)
from .rnet import RNET, RNETOutput, rnet_forward
from .spec import ModelSpec


def build_model(spec: ModelSpec, seed: int = 0, dtype=np.float32) -> Model:
    rng = np.random.default_rng(seed)
    cls = HRED if spec.family == "HRED" else RNET
    return cls(spec, rng, dtype)


__all__ = [
    "DialogueBatch",
    "GatedAttention",
    "HRED",
    "HREDOutput",
    "Model",
    "ModelSpec",
    "NEG_LOGIT",
    "Pointer",
    "RNET",
    "RNETOutput",
    "SpanBatch",
    "build_model",
    "decode_span",
    "gated_attention_layer",
    "hred_forward",
    "load_checkpoint",
    "pointer_output",
    "read_checkpoint",
    "rnet_forward",
    "save_checkpoint",
    "self_match_layer",
]
