"""Hierarchical recurrent encoder-decoder.

Bottom to top: a sentence encoder turns each sentence into its final state,
a dialogue encoder steps over those sentence vectors, and a GRU decoder,
initialised from a tanh projection of the dialogue state after sentence
s - 1, is teacher-forced over sentence s.
"""

from __future__ import annotations

import logging
from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..cells import Cell, CellConfig, run_sequence
from ..errors import EmptyBatchError
from .base import Model
from .batches import DialogueBatch
from .layers import embedding_table, glorot
from .spec import ModelSpec

log = logging.getLogger(__name__)


class HREDOutput(NamedTuple):
    logits: Tensor  # [n x V], one row per decoder position
    targets: np.ndarray  # [n]
    mask: np.ndarray  # [n]
    loss: Tensor


class HRED(Model):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__(spec, dtype)
        e, sizes, kinds = spec.embed_size, spec.layer_sizes, spec.layer_kinds()
        hs, hd, hdec = sizes["sentence"], sizes["dialogue"], sizes["decoder"]
        self.embedding = embedding_table(rng, spec.vocab_size, e, dtype, name="E")
        alpha = spec.alpha if kinds["sentence_encoder"] == "FOFE" else None
        self.sentence_encoder = Cell(
            CellConfig(kinds["sentence_encoder"], e, hs, alpha=alpha, bias=spec.bias), rng=rng, dtype=dtype
        )
        self.dialogue_encoder = Cell(
            CellConfig(kinds["dialogue_encoder"], hs, hd, bias=spec.bias), rng=rng, dtype=dtype
        )
        self.W_init = glorot(rng, (hd, hdec), dtype, "W_init")
        self.decoder = Cell(CellConfig("GRU", e, hdec, bias=spec.bias), rng=rng, dtype=dtype)
        self.W_out = glorot(rng, (hdec, spec.vocab_size), dtype, "W_out")

        self.register("word_embedding", {"E": self.embedding})
        self.register("sentence_encoder", self.sentence_encoder.weights)
        self.register("dialogue_encoder", self.dialogue_encoder.weights)
        self.register("decoder_init", {"W_init": self.W_init})
        self.register("decoder", self.decoder.weights)
        self.register("output", {"W_out": self.W_out})

    def encode_sentences(self, batch: DialogueBatch) -> Tensor:
        """Sentence vectors, time-major over sentences: [S x b x hs]."""
        b, S, T = batch.ids.shape
        words = batch.ids.reshape(b * S, T).T  # [T x bS]
        emb = ad.embedding(self.embedding, words)
        final = run_sequence(self.sentence_encoder, emb, batch.sentence_lengths.reshape(-1)).final
        return ad.transpose(ad.reshape(final, (b, S, final.shape[1])), (1, 0, 2))

    def encode_dialogues(self, batch: DialogueBatch) -> Tensor:
        """Dialogue states after each sentence: [S x b x hd]."""
        return run_sequence(self.dialogue_encoder, self.encode_sentences(batch), batch.dialogue_lengths).outputs

    def forward(self, batch: DialogueBatch) -> HREDOutput:
        b, S, T = batch.ids.shape
        short = batch.dialogue_lengths < 2
        if short.any():
            log.warning("skipping %d dialogue(s) with fewer than 2 sentences", int(short.sum()))
        if S < 2 or short.all():
            raise EmptyBatchError("no dialogue in the batch has a sentence to predict")
        dialogue = self.encode_dialogues(batch)
        hd = dialogue.shape[2]
        # decoder rows ordered (sentence s >= 1, dialogue)
        context = ad.reshape(dialogue[: S - 1], ((S - 1) * b, hd))
        h0 = ad.tanh(context @ self.W_init)

        ids = batch.ids.transpose(1, 0, 2)[1:].reshape((S - 1) * b, T)
        lens = batch.sentence_lengths.T[1:].reshape(-1)
        present = (np.arange(1, S)[:, None] < batch.dialogue_lengths[None, :]).reshape(-1)
        dec_len = np.where(present, np.maximum(lens - 1, 0), 0)
        inputs, targets = ids[:, :-1].T, ids[:, 1:].T  # [T-1 x rows]
        emb = ad.embedding(self.embedding, inputs)
        states = run_sequence(self.decoder, emb, dec_len, h0=h0).outputs
        logits = ad.reshape(states, (-1, states.shape[2])) @ self.W_out
        mask = (np.arange(T - 1)[:, None] < dec_len[None, :]).reshape(-1)
        targets = targets.reshape(-1)
        loss = ad.softmax_xent(logits, targets, mask)
        return HREDOutput(logits, targets, mask, loss)

    __call__ = forward


def hred_forward(model: HRED, batch: DialogueBatch) -> HREDOutput:
    return model.forward(batch)
