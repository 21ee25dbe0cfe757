"""R-NET style span extractor.

Layers bottom to top: word and character-level embeddings, a bidirectional
encoding layer shared by passage and question, question-to-passage gated
attention, passage self-matching, and a pointer network over passage
positions.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..cells import CellConfig
from ..errors import DataError
from .base import Model
from .batches import SpanBatch
from .layers import BiCell, GatedAttention, Pointer, embedding_table, glorot
from .spec import ModelSpec


class RNETOutput(NamedTuple):
    start_logits: Tensor  # [b x Tp]
    end_logits: Tensor
    loss: Tensor
    match_weights: Tensor  # [Tp x b x Tq]
    self_weights: Tensor  # [Tp x b x Tp]


class RNET(Model):
    def __init__(self, spec: ModelSpec, rng: np.random.Generator, dtype=np.float32):
        super().__init__(spec, dtype)
        sizes, kinds = spec.layer_sizes, spec.layer_kinds()
        e, c = spec.embed_size, spec.char_embed_size
        hc, he, hm, hs = sizes["char"], sizes["encoding"], sizes["matching"], sizes["self_matching"]
        a = spec.attn

        self.word_embedding = embedding_table(
            rng, spec.vocab_size, e, dtype, trainable=spec.train_word_embeddings, name="E_word"
        )
        self.char_embedding = embedding_table(rng, spec.char_vocab_size, c, dtype, name="E_char")
        if kinds["char_encoder"] == "BiFOFE":
            self.char_encoder = BiCell(CellConfig("FOFE", c, c, alpha=spec.alpha), rng, dtype)
            # FOFE finals are 2c wide; project to the 2hc character-embedding width
            self.char_projection = glorot(rng, (2 * c, 2 * hc), dtype, "W_char")
        else:
            self.char_encoder = BiCell(CellConfig("GRU", c, hc, bias=spec.bias), rng, dtype)
            self.char_projection = None
        enc_kind = "SGU" if kinds["encoding"] == "BiSGU" else "GRU"
        self.encoder = BiCell(CellConfig(enc_kind, e + 2 * hc, he, bias=spec.bias), rng, dtype)
        self.matching = GatedAttention(2 * he, 2 * he, hm, a, rng, dtype, bias=spec.bias)
        self.self_matching = GatedAttention(2 * hm, 2 * hm, hs, a, rng, dtype, bias=spec.bias)
        self.pointer = Pointer(2 * hs, 2 * he, a, rng, dtype, bias=spec.bias)

        self.register("word_embedding", {"E_word": self.word_embedding})
        self.register("char_embedding", {"E_char": self.char_embedding})
        char = self.char_encoder.named_parameters()
        if self.char_projection is not None:
            char["W_char"] = self.char_projection
        self.register("char_encoder", char)
        self.register("encoding", self.encoder.named_parameters())
        self.register("matching", self.matching.named_parameters())
        self.register("self_matching", self.self_matching.named_parameters())
        self.register("pointer", self.pointer.named_parameters())

    def char_features(self, chars: np.ndarray) -> Tensor:
        """Character-level word vectors, time-major: [T x b x 2hc]."""
        b, T, C = chars.shape
        words = chars.transpose(1, 0, 2).reshape(T * b, C)  # rows ordered (t, b)
        lengths = (words != 0).sum(axis=1)
        emb = ad.embedding(self.char_embedding, words.T)  # [C x Tb x c]
        final = self.char_encoder(emb, lengths).final
        if self.char_projection is not None:
            final = final @ self.char_projection
        return ad.reshape(final, (T, b, final.shape[1]))

    def encode(self, ids: np.ndarray, chars: np.ndarray, lengths: np.ndarray) -> Tensor:
        words = ad.embedding(self.word_embedding, ids.T)
        joined = ad.concat([words, self.char_features(chars)], axis=2)
        return self.encoder(joined, lengths).outputs

    def forward(self, batch: SpanBatch) -> RNETOutput:
        s, e = batch.spans[:, 0], batch.spans[:, 1]
        if np.any(s < 0) or np.any(e < s) or np.any(e >= batch.passage_lengths):
            raise DataError("gold span outside passage bounds")
        p_mask, q_mask = batch.passage_mask, batch.question_mask
        up = self.encode(batch.passage, batch.passage_chars, batch.passage_lengths)
        uq = self.encode(batch.question, batch.question_chars, batch.question_lengths)
        matched = self.matching(up, uq, q_mask, batch.passage_lengths)
        selfm = self.self_matching(matched.outputs, matched.outputs, p_mask, batch.passage_lengths)
        ptr = self.pointer(selfm.outputs, uq, p_mask, q_mask)
        loss = ad.softmax_xent(ptr.start_logits, s) + ad.softmax_xent(ptr.end_logits, e)
        return RNETOutput(ptr.start_logits, ptr.end_logits, loss, matched.weights, selfm.weights)

    __call__ = forward


def rnet_forward(model: RNET, batch: SpanBatch) -> RNETOutput:
    return model.forward(batch)
