"""Vocabularies, dataset files, synthetic tasks and batching.

Dataset files are JSON Lines, one record per line:

* dialogue: ``{"dialogue": [["tok", ...], ["tok", ...], ...]}``
* QA pair: ``{"passage": ["tok", ...], "question": ["tok", ...], "span": [start, end]}``
  where the span is inclusive and indexes passage tokens.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .models.batches import DialogueBatch, SpanBatch

log = logging.getLogger(__name__)

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")


class Vocab:
    """Token <-> id map with ids 0-3 reserved for pad, unk, bos and eos."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos = list(RESERVED)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            if tok in self.stoi:
                raise DataError(f"duplicate token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def __contains__(self, tok):
        return tok in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    @property
    def tokens(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def char_vocab(self) -> "Vocab":
        return Vocab(sorted({ch for tok in self.tokens for ch in tok}))

    def char_table(self, chars: "Vocab", max_chars: int | None = None) -> np.ndarray:
        """[V x C] character ids per token id; pad's row is empty."""
        if max_chars is None:
            max_chars = max((len(t) for t in self.tokens), default=1)
        table = np.zeros((len(self), max_chars), dtype=np.int64)
        for i, tok in enumerate(self.itos):
            if i == PAD:
                continue
            ids = [UNK] if i < len(RESERVED) else chars.encode(tok)[:max_chars]
            table[i, : len(ids)] = ids
        return table


def build_vocab(corpus, min_count: int = 1) -> Vocab:
    """Vocabulary of tokens seen at least ``min_count`` times.

    ``corpus`` is a whitespace-separated string or an iterable of token
    sequences. Ids go by descending frequency, ties broken lexicographically.
    """
    if isinstance(corpus, str):
        corpus = [corpus.split()]
    counts = Counter(tok for seq in corpus for tok in seq)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([t for t, n in ranked if n >= min_count and t not in RESERVED])


# ----------------------------------------------------------------------------
# samples and datasets


@dataclass
class QASample:
    passage: list[int]
    question: list[int]
    span: tuple[int, int]


@dataclass
class Dataset:
    """Samples with their vocabulary. ``kind`` is ``dialogue`` or ``qa``.

    Dialogue samples are lists of sentences of token ids (no bos/eos).
    """

    kind: str
    vocab: Vocab
    samples: list
    char_vocab: Vocab | None = None

    def __len__(self):
        return len(self.samples)

    def subset(self, samples) -> "Dataset":
        return Dataset(self.kind, self.vocab, list(samples), self.char_vocab)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Seeded desk-scale stand-in for a dialogue or reading-comprehension corpus.

    ``length`` is the inclusive range of sentence lengths (copy, toy_dialogue)
    or passage lengths (toy_qa). ``vocab_size`` counts the 4 reserved ids.
    """

    task: str
    vocab_size: int = 50
    length: tuple = (3, 6)
    num_samples: int = 2000
    seed: int = 0
    sentences: int = 3

    def __post_init__(self):
        if self.task not in ("copy", "toy_dialogue", "toy_qa"):
            raise ConfigError(f"unknown task {self.task!r}")
        lo, hi = self.length
        object.__setattr__(self, "length", (int(lo), int(hi)))
        if not 1 <= lo <= hi:
            raise ConfigError(f"bad length range {self.length}")
        if self.vocab_size < len(RESERVED) + 2:
            raise ConfigError("vocab_size leaves fewer than 2 content tokens")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def synthetic_vocab(vocab_size: int) -> Vocab:
    """Distinct pseudo-words of 3-7 lowercase letters; fixed for a given size."""
    rng = np.random.default_rng(vocab_size)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    words: list[str] = []
    seen = set()
    while len(words) < vocab_size - len(RESERVED):
        w = "".join(rng.choice(letters, size=int(rng.integers(3, 8))))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return Vocab(words)


def _lengths(rng, spec, n):
    lo, hi = spec.length
    return rng.integers(lo, hi + 1, size=n)


def gen_copy_task(spec: SyntheticTaskSpec) -> Dataset:
    """Two-sentence dialogues whose second sentence repeats the first."""
    rng = np.random.default_rng(spec.seed)
    vocab = synthetic_vocab(spec.vocab_size)
    samples = []
    for n in _lengths(rng, spec, spec.num_samples):
        s = rng.integers(len(RESERVED), spec.vocab_size, size=n).tolist()
        samples.append([s, list(s)])
    return Dataset("dialogue", vocab, samples)


def gen_toy_dialogue(spec: SyntheticTaskSpec) -> Dataset:
    """Three-sentence dialogues: an opener, its reversal, then the opener shifted by one id."""
    rng = np.random.default_rng(spec.seed)
    vocab = synthetic_vocab(spec.vocab_size)
    lo, span = len(RESERVED), spec.vocab_size - len(RESERVED)
    samples = []
    for n in _lengths(rng, spec, spec.num_samples):
        s = rng.integers(lo, spec.vocab_size, size=n)
        turns = [s.tolist(), s[::-1].tolist(), ((s - lo + 1) % span + lo).tolist()]
        samples.append(turns[: spec.sentences])
    return Dataset("dialogue", vocab, samples)


def gen_toy_qa(spec: SyntheticTaskSpec) -> Dataset:
    """Passages of distinct-from-key tokens with the key inserted once; question = [key]."""
    rng = np.random.default_rng(spec.seed)
    vocab = synthetic_vocab(spec.vocab_size)
    lo = len(RESERVED)
    samples = []
    for n in _lengths(rng, spec, spec.num_samples):
        key = int(rng.integers(lo, spec.vocab_size))
        others = rng.integers(lo, spec.vocab_size - 1, size=n - 1)
        others = np.where(others >= key, others + 1, others).tolist()
        pos = int(rng.integers(0, n))
        passage = others[:pos] + [key] + others[pos:]
        samples.append(QASample(passage, [key], (pos, pos)))
    return Dataset("qa", vocab, samples, vocab.char_vocab())


GENERATORS = {"copy": gen_copy_task, "toy_dialogue": gen_toy_dialogue, "toy_qa": gen_toy_qa}


def generate(spec: SyntheticTaskSpec) -> Dataset:
    return GENERATORS[spec.task](spec)


def split_holdout(samples: Sequence, frac: float = 0.1, seed: int = 0) -> tuple[list, list]:
    """Seed-stable (train, held-out) partition; held-out gets ``ceil(frac * n)`` samples."""
    n = len(samples)
    n_held = min(n - 1, int(np.ceil(frac * n))) if n > 1 else 0
    order = np.random.default_rng(seed).permutation(n)
    held = set(order[:n_held].tolist())
    return [s for i, s in enumerate(samples) if i not in held], [s for i, s in enumerate(samples) if i in held]


# ----------------------------------------------------------------------------
# batching


def collate_dialogues(samples: Sequence[Sequence[Sequence[int]]]) -> DialogueBatch:
    b = len(samples)
    S = max(len(d) for d in samples)
    T = max(len(s) + 2 for d in samples for s in d)
    ids = np.zeros((b, S, T), dtype=np.int64)
    sl = np.zeros((b, S), dtype=np.int64)
    dl = np.zeros(b, dtype=np.int64)
    for i, d in enumerate(samples):
        dl[i] = len(d)
        for j, s in enumerate(d):
            wrapped = [BOS, *s, EOS]
            ids[i, j, : len(wrapped)] = wrapped
            sl[i, j] = len(wrapped)
    return DialogueBatch(ids, sl, dl)


def collate_spans(samples: Sequence[QASample], char_table: np.ndarray) -> SpanBatch:
    b = len(samples)
    tp = max(len(s.passage) for s in samples)
    tq = max(len(s.question) for s in samples)
    passage = np.zeros((b, tp), dtype=np.int64)
    question = np.zeros((b, tq), dtype=np.int64)
    pl = np.array([len(s.passage) for s in samples], dtype=np.int64)
    ql = np.array([len(s.question) for s in samples], dtype=np.int64)
    for i, s in enumerate(samples):
        passage[i, : pl[i]] = s.passage
        question[i, : ql[i]] = s.question
    spans = np.array([s.span for s in samples], dtype=np.int64).reshape(b, 2)
    return SpanBatch(passage, pl, question, ql, char_table[passage], char_table[question], spans)


def collate_fn(dataset: Dataset) -> Callable:
    if dataset.kind == "dialogue":
        return collate_dialogues
    table = dataset.vocab.char_table(dataset.char_vocab)
    return lambda samples: collate_spans(samples, table)


def batchify(samples: Sequence, batch_size: int, shuffle_seed: int | None = None,
             collate: Callable | None = None) -> Iterator:
    """Yield consecutive batches; every sample appears exactly once.

    With ``shuffle_seed`` the order is a seeded permutation; ``collate`` (if
    given) turns each list of samples into a padded batch.
    """
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        yield collate(chunk) if collate is not None else chunk


# ----------------------------------------------------------------------------
# files


def _records(path) -> Iterator[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise DataError(f"{path}:{lineno}: record is not an object")
            yield lineno, rec


def _token_list(x, where) -> list[str]:
    if not isinstance(x, list) or not all(isinstance(t, str) for t in x):
        raise DataError(f"{where}: expected a list of token strings")
    return x


def read_dialogues(path) -> tuple[list[list[list[str]]], int]:
    """Token-string dialogues from a JSONL file and the count skipped for having < 2 sentences."""
    out, skipped = [], 0
    for lineno, rec in _records(path):
        where = f"{path}:{lineno}"
        if "dialogue" not in rec or not isinstance(rec["dialogue"], list):
            raise DataError(f"{where}: missing 'dialogue' list")
        sents = [_token_list(s, where) for s in rec["dialogue"]]
        if len(sents) < 2:
            skipped += 1
            continue
        out.append(sents)
    return out, skipped


def read_qa(path) -> list[tuple[list[str], list[str], tuple[int, int]]]:
    out = []
    for lineno, rec in _records(path):
        where = f"{path}:{lineno}"
        try:
            p, q, sp = rec["passage"], rec["question"], rec["span"]
        except KeyError as exc:
            raise DataError(f"{where}: missing field {exc.args[0]!r}") from None
        p, q = _token_list(p, where), _token_list(q, where)
        if not (isinstance(sp, list) and len(sp) == 2 and 0 <= sp[0] <= sp[1] < len(p)):
            raise DataError(f"{where}: span {sp!r} outside passage of length {len(p)}")
        out.append((p, q, (int(sp[0]), int(sp[1]))))
    return out


def load_dialogues(path, vocab: Vocab | None = None, batch_size: int = 32,
                   shuffle_seed: int | None = None) -> Iterator[DialogueBatch]:
    """Padded :class:`DialogueBatch` stream from a dialogue JSONL file."""
    dialogues, skipped = read_dialogues(path)
    if skipped:
        log.warning("%s: skipped %d dialogue(s) with fewer than 2 sentences", path, skipped)
    if vocab is None:
        vocab = build_vocab(s for d in dialogues for s in d)
    encoded = [[vocab.encode(s) for s in d] for d in dialogues]
    return batchify(encoded, batch_size, shuffle_seed, collate_dialogues)


def load_dataset(path, kind: str, vocab: Vocab | None = None) -> Dataset:
    if kind == "dialogue":
        dialogues, skipped = read_dialogues(path)
        if skipped:
            log.warning("%s: skipped %d dialogue(s) with fewer than 2 sentences", path, skipped)
        vocab = vocab or build_vocab(s for d in dialogues for s in d)
        return Dataset("dialogue", vocab, [[vocab.encode(s) for s in d] for d in dialogues])
    records = read_qa(path)
    vocab = vocab or build_vocab(p + q for p, q, _ in records)
    samples = [QASample(vocab.encode(p), vocab.encode(q), sp) for p, q, sp in records]
    return Dataset("qa", vocab, samples, vocab.char_vocab())


def detokenize(batch: DialogueBatch, vocab: Vocab) -> list[list[list[str]]]:
    out = []
    for i in range(batch.size):
        d = []
        for j in range(int(batch.dialogue_lengths[i])):
            n = int(batch.sentence_lengths[i, j])
            ids = [t for t in batch.ids[i, j, :n].tolist() if t not in (BOS, EOS, PAD)]
            d.append(vocab.decode(ids))
        out.append(d)
    return out


def write_dataset(dataset: Dataset, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dec = dataset.vocab.decode
    with open(path, "w", encoding="utf-8") as fh:
        for s in dataset.samples:
            if dataset.kind == "dialogue":
                rec = {"dialogue": [dec(x) for x in s]}
            else:
                rec = {"passage": dec(s.passage), "question": dec(s.question), "span": list(s.span)}
            fh.write(json.dumps(rec) + "\n")
