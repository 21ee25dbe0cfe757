"""Perplexity, error rate, exact match and token-overlap F1."""

from __future__ import annotations

import math
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .. import autodiff as ad
from ..errors import EmptyBatchError
from ..models import decode_span


LN10 = math.log(10.0)


class LMTally:
    """Running mean of masked NLL and argmax error count over decoder positions.

    The mean is updated per block so that equal per-position losses give a
    mean equal to that loss, bit for bit.
    """

    def __init__(self):
        self.mean_nll = 0.0
        self.errors = 0
        self.count = 0

    def add(self, logits: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> None:
        mask = np.asarray(mask, dtype=bool)
        x = np.asarray(logits, dtype=np.float64)[mask]
        t = np.asarray(targets)[mask]
        if not t.size:
            return
        shifted = x - x.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        nll = logz - shifted[np.arange(t.size), t]
        # accumulate deviations from a reference so equal losses stay exact
        ref = self.mean_nll if self.count else float(nll[0])
        prior = self.count * (self.mean_nll - ref)
        self.count += int(t.size)
        self.mean_nll = ref + (math.fsum((nll - ref).tolist()) + prior) / self.count
        self.errors += int((x.argmax(axis=1) != t).sum())

    def result(self) -> dict:
        if self.count == 0:
            raise EmptyBatchError("no target positions to evaluate")
        # 10 ** (nll / ln 10) == exp(nll); this form gives exactly V for uniform logits over V = 10
        return {"ppl": 10.0 ** (self.mean_nll / LN10), "err_rate": self.errors / self.count}


def lm_metrics(logits, targets, mask=None) -> dict:
    """Perplexity and teacher-forced error rate of one block of logits."""
    targets = np.asarray(targets)
    tally = LMTally()
    tally.add(logits, targets, np.ones(targets.shape, bool) if mask is None else mask)
    return tally.result()


def eval_lm(model, batches: Iterable) -> dict:
    tally = LMTally()
    with ad.no_grad():
        for batch in batches:
            out = model(batch)
            tally.add(out.logits.data, out.targets, out.mask)
    return tally.result()


def span_f1(pred_tokens: Sequence, gold_tokens: Sequence) -> float:
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(pred_tokens)
    r = overlap / len(gold_tokens)
    return 2 * p * r / (p + r)


def span_scores(pred: tuple[int, int], gold: tuple[int, int], passage: Sequence) -> tuple[float, float]:
    """(exact match, F1) of one predicted inclusive span against gold."""
    em = float(tuple(pred) == tuple(gold))
    f1 = span_f1(list(passage[pred[0]:pred[1] + 1]), list(passage[gold[0]:gold[1] + 1]))
    return em, f1


def eval_span(model, batches: Iterable, max_len: int = 10) -> dict:
    em_total = f1_total = 0.0
    n = 0
    with ad.no_grad():
        for batch in batches:
            out = model(batch)
            for i in range(batch.size):
                L = int(batch.passage_lengths[i])
                pred = decode_span(out.start_logits.data[i, :L], out.end_logits.data[i, :L], max_len)
                em, f1 = span_scores(pred, tuple(batch.spans[i]), batch.passage[i, :L].tolist())
                em_total += em
                f1_total += f1
                n += 1
    if n == 0:
        raise EmptyBatchError("no samples to evaluate")
    return {"EM": em_total / n, "F1": f1_total / n}
