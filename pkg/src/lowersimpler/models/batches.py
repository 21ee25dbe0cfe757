from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError

PAD = 0


@dataclass
class DialogueBatch:
    """Padded dialogues: ``ids[b, s, t]`` with bos/eos-wrapped sentences.

    Sentence s of a dialogue is predicted from the dialogue state after s - 1;
    the decoder reads ``ids[..., :-1]`` and is scored on ``ids[..., 1:]``.
    """

    ids: np.ndarray  # [b x S x T]
    sentence_lengths: np.ndarray  # [b x S]
    dialogue_lengths: np.ndarray  # [b]

    @property
    def size(self) -> int:
        return self.ids.shape[0]

    def validate(self, vocab_size: int) -> None:
        b, S, T = self.ids.shape
        if self.sentence_lengths.shape != (b, S) or self.dialogue_lengths.shape != (b,):
            raise DataError("length arrays do not match the id tensor")
        if self.ids.min(initial=0) < 0 or self.ids.max(initial=0) >= vocab_size:
            raise DataError(f"token id outside [0, {vocab_size})")
        if self.sentence_lengths.max(initial=0) > T or self.dialogue_lengths.max(initial=0) > S:
            raise DataError("a length exceeds the padded extent")
        live = np.arange(T)[None, None, :] < self.sentence_lengths[:, :, None]
        if np.any(self.ids[~live] != PAD):
            raise DataError("non-pad token beyond a sentence length")

    def padded(self, extra_words: int = 0, extra_sentences: int = 0) -> "DialogueBatch":
        ids = np.pad(self.ids, ((0, 0), (0, extra_sentences), (0, extra_words)), constant_values=PAD)
        lens = np.pad(self.sentence_lengths, ((0, 0), (0, extra_sentences)))
        return DialogueBatch(ids, lens, self.dialogue_lengths.copy())


@dataclass
class SpanBatch:
    """Passage/question pairs with character ids and gold answer spans."""

    passage: np.ndarray  # [b x Tp]
    passage_lengths: np.ndarray  # [b]
    question: np.ndarray  # [b x Tq]
    question_lengths: np.ndarray  # [b]
    passage_chars: np.ndarray  # [b x Tp x C]
    question_chars: np.ndarray  # [b x Tq x C]
    spans: np.ndarray  # [b x 2], inclusive (start, end)

    @property
    def size(self) -> int:
        return self.passage.shape[0]

    @property
    def passage_mask(self) -> np.ndarray:
        return np.arange(self.passage.shape[1])[None, :] < self.passage_lengths[:, None]

    @property
    def question_mask(self) -> np.ndarray:
        return np.arange(self.question.shape[1])[None, :] < self.question_lengths[:, None]

    def validate(self, vocab_size: int, char_vocab_size: int | None = None) -> None:
        for name in ("passage", "question"):
            arr = getattr(self, name)
            if arr.min(initial=0) < 0 or arr.max(initial=0) >= vocab_size:
                raise DataError(f"{name} token id outside [0, {vocab_size})")
        if char_vocab_size is not None:
            for arr in (self.passage_chars, self.question_chars):
                if arr.min(initial=0) < 0 or arr.max(initial=0) >= char_vocab_size:
                    raise DataError(f"char id outside [0, {char_vocab_size})")
        s, e = self.spans[:, 0], self.spans[:, 1]
        if np.any(s < 0) or np.any(e < s) or np.any(e >= self.passage_lengths):
            raise DataError("gold span outside passage bounds")

    def padded(self, extra_passage: int = 0, extra_question: int = 0) -> "SpanBatch":
        return SpanBatch(
            np.pad(self.passage, ((0, 0), (0, extra_passage))),
            self.passage_lengths.copy(),
            np.pad(self.question, ((0, 0), (0, extra_question))),
            self.question_lengths.copy(),
            np.pad(self.passage_chars, ((0, 0), (0, extra_passage), (0, 0))),
            np.pad(self.question_chars, ((0, 0), (0, extra_question), (0, 0))),
            self.spans.copy(),
        )
