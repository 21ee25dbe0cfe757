"""Training runs with per-epoch wall-clock accounting."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .. import autodiff as ad
from ..data import SyntheticTaskSpec, batchify, collate_fn, generate, split_holdout, synthetic_vocab
from ..errors import ConfigError, NonFiniteError
from ..models import Model, ModelSpec, build_model
from .metrics import eval_lm, eval_span
from .optim import Adam

log = logging.getLogger(__name__)

DEFAULT_LR = {"HRED": 1e-4, "RNET": 5e-4}
DEFAULT_ALPHA = {"HRED": 0.9, "RNET": 0.7}
PRECISION = {"single": np.float32, "double": np.float64}


@dataclass
class RunConfig:
    model: ModelSpec
    task: SyntheticTaskSpec
    learning_rate: float | None = None
    batch_size: int = 32
    epochs: int = 10
    alpha: float | None = None
    seed: int = 0
    precision: str = "single"
    max_span_len: int = 10
    holdout: float = 0.1
    output: str | None = None

    def __post_init__(self):
        if self.learning_rate is None:
            self.learning_rate = DEFAULT_LR[self.model.family]
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.alpha is not None and self.alpha != self.model.alpha:
            self.model = replace(self.model, alpha=self.alpha)
        self.alpha = self.model.alpha
        if self.precision not in PRECISION:
            raise ConfigError(f"precision must be one of {sorted(PRECISION)}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        want = "qa" if self.model.family == "RNET" else "dialogue"
        got = "qa" if self.task.task == "toy_qa" else "dialogue"
        if want != got:
            raise ConfigError(f"{self.model.family} cannot train on task {self.task.task!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["task"] = self.task.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["model"] = ModelSpec.from_dict(d["model"])
        d["task"] = SyntheticTaskSpec(**{**d["task"], "length": tuple(d["task"]["length"])})
        return cls(**d)


def spec_for_task(family: str, variant: str, task: SyntheticTaskSpec, embed_size: int,
                  sizes: tuple, alpha: float | None = None, char_embed_size: int = 16,
                  attention_size: int = 0) -> ModelSpec:
    """A model spec whose vocabulary sizes match the synthetic task."""
    family = family.upper()
    alpha = DEFAULT_ALPHA[family] if alpha is None else alpha
    if family == "HRED":
        return ModelSpec.hred(task.vocab_size, embed_size, *sizes, variant=variant, alpha=alpha,
                              attention_size=attention_size)
    chars = len(synthetic_vocab(task.vocab_size).char_vocab())
    return ModelSpec.rnet(task.vocab_size, embed_size, *sizes, char_vocab_size=chars,
                          char_embed_size=char_embed_size, variant=variant, alpha=alpha,
                          attention_size=attention_size)


@dataclass
class TrainReport:
    family: str
    variant: str
    trainable_params: int
    secs_per_epoch: list = field(default_factory=list)
    epochs_run: int = 0
    history: list = field(default_factory=list)  # metrics after epoch 0..epochs_run
    param_breakdown: dict = field(default_factory=dict)
    diverged: bool = False

    @property
    def final(self) -> dict:
        return self.history[-1] if self.history else {}

    @property
    def median_secs(self) -> float:
        return float(np.median(self.secs_per_epoch)) if self.secs_per_epoch else float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final"] = self.final
        return d


def param_audit(model: Model) -> dict:
    """Per-layer trainable parameter counts and their total."""
    breakdown = model.param_breakdown()
    return {"layers": breakdown, "total": sum(breakdown.values())}


def evaluate(model: Model, batches: list, max_span_len: int = 10) -> dict:
    if model.spec.family == "HRED":
        return eval_lm(model, batches)
    return eval_span(model, batches, max_span_len)


def train_run(config: RunConfig, data=None) -> TrainReport:
    """Train one model on its synthetic task; time each epoch's updates.

    Timing covers forward, backward and the optimiser step for every batch of
    the epoch. Batch assembly and held-out evaluation are outside the timer.
    """
    dtype = PRECISION[config.precision]
    data = generate(config.task) if data is None else data
    spec = config.model
    if spec.vocab_size != len(data.vocab):
        raise ConfigError(f"model vocab {spec.vocab_size} != task vocab {len(data.vocab)}")
    if spec.family == "RNET" and spec.char_vocab_size != len(data.char_vocab):
        raise ConfigError(f"model char vocab {spec.char_vocab_size} != task {len(data.char_vocab)}")
    train, held = split_holdout(data.samples, config.holdout, config.seed)
    collate = collate_fn(data)
    held_batches = list(batchify(held, config.batch_size, None, collate))

    model = build_model(spec, seed=config.seed, dtype=dtype)
    opt = Adam(model.parameters(), config.learning_rate)
    report = TrainReport(spec.family, spec.variant, model.num_params,
                         param_breakdown=model.param_breakdown())
    report.history.append(evaluate(model, held_batches, config.max_span_len))

    for epoch in range(1, config.epochs + 1):
        batches = list(batchify(train, config.batch_size, config.seed * 100003 + epoch, collate))
        try:
            start = time.perf_counter()
            for batch in batches:
                opt.zero_grad()
                with ad.tape():
                    loss = model(batch).loss
                    ad.backward(loss)
                opt.step()
            elapsed = time.perf_counter() - start
        except NonFiniteError as exc:
            log.error("%s %s diverged in epoch %d: %s", spec.family, spec.variant, epoch, exc)
            report.diverged = True
            break
        report.secs_per_epoch.append(elapsed)
        report.epochs_run = epoch
        report.history.append(evaluate(model, held_batches, config.max_span_len))
        log.info("%s %s epoch %d: %.2fs %s", spec.family, spec.variant, epoch, elapsed, report.final)
    return report
