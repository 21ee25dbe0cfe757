"""Attention, gating and pointer layers shared by the model assemblies."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..cells import Cell, CellConfig, bi_encode
from ..errors import ContractError

NEG_LOGIT = -1e9  # logit given to masked positions


def glorot(rng, shape, dtype, name=None) -> Tensor:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True, name=name)


def embedding_table(rng, n, d, dtype, trainable=True, name=None) -> Tensor:
    # unit expected squared norm per row
    limit = math.sqrt(3.0 / d)
    return Tensor(rng.uniform(-limit, limit, size=(n, d)).astype(dtype), requires_grad=trainable, name=name)


class BiCell:
    """Forward and backward cells of one bidirectional layer."""

    def __init__(self, config: CellConfig, rng, dtype):
        self.fwd = Cell(config, rng=rng, dtype=dtype)
        self.bwd = Cell(config, rng=rng, dtype=dtype)

    @property
    def config(self) -> CellConfig:
        return self.fwd.config

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"fwd.{k}": v for k, v in self.fwd.weights.items()}
        out.update({f"bwd.{k}": v for k, v in self.bwd.weights.items()})
        return out

    def __call__(self, xs: Tensor, lengths=None):
        return bi_encode(self.fwd, self.bwd, xs, lengths)


def batch_major(seq: Tensor) -> Tensor:
    return ad.transpose(seq, (1, 0, 2))


def attend(weights: Tensor, memory_bm: Tensor) -> Tensor:
    """Weighted sum over memory: [n x Tm] weights, [n x Tm x h] memory -> [n x h]."""
    n, tm = weights.shape
    return ad.reshape(ad.reshape(weights, (n, 1, tm)) @ memory_bm, (n, memory_bm.shape[2]))


class AttentionResult(NamedTuple):
    outputs: Tensor  # [T x b x 2h']
    weights: Tensor  # [T x b x Tm]
    context: Tensor  # [T x b x hv]


class GatedAttention:
    """Gated attention-based bidirectional recurrent layer.

    Each position of ``seq`` attends additively over ``memory``; the input
    and its attention context are concatenated, scaled by a sigmoid gate and
    fed through a bidirectional recurrent pass.
    """

    def __init__(self, seq_size: int, mem_size: int, hidden_size: int, attn_size: int,
                 rng, dtype, kind: str = "GRU", bias: bool = False):
        self.W_u = glorot(rng, (seq_size, attn_size), dtype, "W_u")
        self.W_m = glorot(rng, (mem_size, attn_size), dtype, "W_m")
        self.v = glorot(rng, (attn_size,), dtype, "v")
        n = seq_size + mem_size
        self.W_g = glorot(rng, (n, n), dtype, "W_g")
        self.rnn = BiCell(CellConfig(kind, n, hidden_size, bias=bias), rng, dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"W_u": self.W_u, "W_m": self.W_m, "v": self.v, "W_g": self.W_g}
        out.update(self.rnn.named_parameters())
        return out

    def attention(self, seq: Tensor, memory: Tensor, mem_mask) -> tuple[Tensor, Tensor]:
        T, b, hu = seq.shape
        tm = memory.shape[0]
        mem_mask = np.asarray(mem_mask, dtype=bool)
        if mem_mask.shape != (b, tm):
            raise ContractError(f"memory mask {mem_mask.shape} does not match memory [{tm} x {b}]")
        if not mem_mask.any(axis=1).all():
            raise ContractError("a memory row has no unmasked positions")
        a = self.v.shape[0]
        mem_bm = batch_major(memory)  # [b x Tm x hv]
        mem_proj = mem_bm @ self.W_m  # [b x Tm x a]
        seq_proj = ad.reshape(ad.reshape(seq, (T * b, hu)) @ self.W_u, (T * b, 1, a))
        # rows ordered (t, b) so reshapes below stay time-major
        rep = np.tile(np.arange(b), T)
        scores = ad.tanh(mem_proj[rep] + seq_proj) @ self.v  # [Tb x Tm]
        weights = ad.softmax(scores, mask=mem_mask[rep])
        context = ad.reshape(attend(weights, mem_bm[rep]), (T, b, memory.shape[2]))
        return ad.reshape(weights, (T, b, tm)), context

    def __call__(self, seq: Tensor, memory: Tensor, mem_mask, lengths=None) -> AttentionResult:
        weights, context = self.attention(seq, memory, mem_mask)
        joined = ad.concat([seq, context], axis=2)
        gate = ad.sigmoid(joined @ self.W_g)
        out = self.rnn(gate * joined, lengths)
        return AttentionResult(out.outputs, weights, context)


def gated_attention_layer(layer: GatedAttention, seq_u: Tensor, mem_v: Tensor, mem_mask, lengths=None):
    return layer(seq_u, mem_v, mem_mask, lengths)


def self_match_layer(layer: GatedAttention, seq: Tensor, mask, lengths=None):
    """Gated attention of a sequence over itself."""
    return layer(seq, seq, mask, lengths)


class PointerResult(NamedTuple):
    start_logits: Tensor  # [b x Tp], masked positions at NEG_LOGIT
    end_logits: Tensor
    question_weights: Tensor  # [b x Tq]


class Pointer:
    """Two-step pointer network over passage positions.

    The initial state is an attention-pooled question vector. The start
    distribution attends over the passage from that state; one GRU step on
    the start-weighted passage context gives the state for the end step.
    """

    def __init__(self, passage_size: int, question_size: int, attn_size: int, rng, dtype, bias=False):
        self.W_q = glorot(rng, (question_size, attn_size), dtype, "W_q")
        self.q_query = glorot(rng, (attn_size,), dtype, "q_query")
        self.v_q = glorot(rng, (attn_size,), dtype, "v_q")
        self.W_p = glorot(rng, (passage_size, attn_size), dtype, "W_p")
        self.W_s = glorot(rng, (question_size, attn_size), dtype, "W_s")
        self.v_p = glorot(rng, (attn_size,), dtype, "v_p")
        self.cell = Cell(CellConfig("GRU", passage_size, question_size, bias=bias), rng=rng, dtype=dtype)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {k: getattr(self, k) for k in ("W_q", "q_query", "v_q", "W_p", "W_s", "v_p")}
        out.update({f"cell.{k}": v for k, v in self.cell.weights.items()})
        return out

    def __call__(self, passage: Tensor, question: Tensor, p_mask, q_mask) -> PointerResult:
        p_mask = np.asarray(p_mask, dtype=bool)
        q_mask = np.asarray(q_mask, dtype=bool)
        if passage.shape[0] == 0 or not p_mask.any(axis=1).all():
            raise ContractError("pointer: empty passage")
        b = passage.shape[1]
        a = self.v_p.shape[0]
        q_bm = batch_major(question)
        q_scores = ad.tanh(q_bm @ self.W_q + self.q_query) @ self.v_q
        q_weights = ad.softmax(q_scores, mask=q_mask)
        state = attend(q_weights, q_bm)  # [b x hq]

        p_bm = batch_major(passage)
        p_proj = p_bm @ self.W_p  # [b x Tp x a]

        def scores(s):
            return ad.tanh(p_proj + ad.reshape(s @ self.W_s, (b, 1, a))) @ self.v_p

        start = scores(state)
        start_w = ad.softmax(start, mask=p_mask)
        state = self.cell.step(state, attend(start_w, p_bm))
        end = scores(state)
        fill = Tensor(np.full(start.shape, NEG_LOGIT, dtype=start.dtype))
        return PointerResult(ad.where(p_mask, start, fill), ad.where(p_mask, end, fill), q_weights)


def pointer_output(layer: Pointer, passage_reps: Tensor, question_reps: Tensor, p_mask, q_mask):
    return layer(passage_reps, question_reps, p_mask, q_mask)


def decode_span(start_logits, end_logits, max_len: int = 10) -> tuple[int, int]:
    """Best (i, j) with i <= j < i + max_len by start[i] + end[j].

    Ties go to the smallest i, then the smallest j.
    """
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")
    s = np.asarray(start_logits, dtype=np.float64).reshape(-1)
    e = np.asarray(end_logits, dtype=np.float64).reshape(-1)
    T = s.size
    lag = np.arange(T)[None, :] - np.arange(T)[:, None]
    legal = (lag >= 0) & (lag < max_len)
    total = np.where(legal, s[:, None] + e[None, :], -np.inf)
    i, j = np.unravel_index(int(np.argmax(total)), total.shape)
    return int(i), int(j)
