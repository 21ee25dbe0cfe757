"""Recurrent building blocks: GRU, MGU, SGU and FOFE.

Weight matrices are stored input-major, ``(hidden + input) x hidden``, so a
batch of concatenated ``[h_prev, x]`` rows multiplies them directly. SGU gate
weights are plain vectors of length ``hidden + input``; each produces one
scalar gate per batch row.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError


class CellKind(str, enum.Enum):
    GRU = "GRU"
    MGU = "MGU"
    SGU = "SGU"
    FOFE = "FOFE"


@dataclass(frozen=True)
class CellConfig:
    kind: CellKind
    input_size: int
    hidden_size: int
    alpha: float | None = None
    bias: bool = False

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", CellKind(self.kind))
        except ValueError:
            raise ConfigError(f"unknown cell kind {self.kind!r}") from None
        if self.input_size < 1 or self.hidden_size < 1:
            raise ConfigError("input_size and hidden_size must be positive")
        if self.kind is CellKind.FOFE:
            check_alpha(self.alpha)
            if self.hidden_size != self.input_size:
                raise ConfigError(
                    f"FOFE state width must equal input width ({self.hidden_size} != {self.input_size})"
                )


def check_alpha(alpha) -> float:
    if alpha is None or not 0.0 < float(alpha) < 1.0:
        raise ConfigError(f"forgetting factor must lie in (0, 1), got {alpha}")
    return float(alpha)


def weight_shapes(config: CellConfig) -> dict[str, tuple]:
    h, n = config.hidden_size, config.hidden_size + config.input_size
    kind = config.kind
    if kind is CellKind.FOFE:
        return {}
    if kind is CellKind.GRU:
        shapes = {"W_z": (n, h), "W_r": (n, h), "W_h": (n, h)}
        biases = {"b_z": (h,), "b_r": (h,), "b_h": (h,)}
    elif kind is CellKind.MGU:
        shapes = {"W_f": (n, h), "W_h": (n, h)}
        biases = {"b_f": (h,), "b_h": (h,)}
    else:
        shapes = {"w_z": (n,), "w_r": (n,), "W_h": (n, h)}
        biases = {"b_z": (1,), "b_r": (1,), "b_h": (h,)}
    if config.bias:
        shapes.update(biases)
    return shapes


def count_params(config: CellConfig) -> int:
    """Trainable parameter count from the closed-form formulas."""
    h, x = config.hidden_size, config.input_size
    kind = config.kind
    if kind is CellKind.FOFE:
        return 0
    if kind is CellKind.GRU:
        return 3 * h * (h + x) + (3 * h if config.bias else 0)
    if kind is CellKind.MGU:
        return 2 * h * (h + x) + (2 * h if config.bias else 0)
    return h * (h + x) + 2 * (h + x) + (h + 2 if config.bias else 0)


def init_weights(config: CellConfig, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases. Vectors use fan_out = 1."""
    out = {}
    for name, shape in weight_shapes(config).items():
        if name.startswith("b_"):
            data = np.zeros(shape)
        else:
            fan_in, fan_out = shape[0], shape[1] if len(shape) == 2 else 1
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            data = rng.uniform(-limit, limit, size=shape)
        out[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    return out


def _check_step(w: dict, h_prev: Tensor, x: Tensor):
    n, h = w["W_h"].shape
    if h_prev.ndim != 2 or x.ndim != 2 or h_prev.shape[1] != h or h_prev.shape[0] != x.shape[0]:
        raise DimensionError(f"state {h_prev.shape} / input {x.shape} do not fit hidden size {h}")
    if h + x.shape[1] != n:
        raise DimensionError(f"input width {x.shape[1]} does not fit weights {w['W_h'].shape}")


def _affine(hx: Tensor, w: dict, name: str, bias: str) -> Tensor:
    out = hx @ w[name]
    return out + w[bias] if bias in w else out


def gru_step(w: dict, h_prev: Tensor, x: Tensor) -> Tensor:
    _check_step(w, h_prev, x)
    hx = ad.concat([h_prev, x], axis=1)
    z = ad.sigmoid(_affine(hx, w, "W_z", "b_z"))
    r = ad.sigmoid(_affine(hx, w, "W_r", "b_r"))
    h_new = ad.tanh(_affine(ad.concat([r * h_prev, x], axis=1), w, "W_h", "b_h"))
    return (1.0 - z) * h_prev + z * h_new


def sgu_step(w: dict, h_prev: Tensor, x: Tensor) -> Tensor:
    _check_step(w, h_prev, x)
    b = h_prev.shape[0]
    hx = ad.concat([h_prev, x], axis=1)
    # one scalar per batch row
    z = ad.sigmoid(ad.reshape(_affine(hx, w, "w_z", "b_z"), (b, 1)))
    r = ad.sigmoid(ad.reshape(_affine(hx, w, "w_r", "b_r"), (b, 1)))
    h_new = ad.tanh(_affine(ad.concat([ad.scalar_mul(r, h_prev), x], axis=1), w, "W_h", "b_h"))
    return ad.scalar_mul(1.0 - z, h_prev) + ad.scalar_mul(z, h_new)


def mgu_step(w: dict, h_prev: Tensor, x: Tensor) -> Tensor:
    _check_step(w, h_prev, x)
    hx = ad.concat([h_prev, x], axis=1)
    f = ad.sigmoid(_affine(hx, w, "W_f", "b_f"))
    h_new = ad.tanh(_affine(ad.concat([f * h_prev, x], axis=1), w, "W_h", "b_h"))
    return (1.0 - f) * h_prev + f * h_new


def fofe_step(alpha: float, h_prev: Tensor, x: Tensor) -> Tensor:
    if h_prev.shape != x.shape:
        raise DimensionError(f"FOFE state {h_prev.shape} and input {x.shape} must match")
    return alpha * h_prev + x


def fofe_encode_recurrent(alpha: float, xs: Tensor) -> Tensor:
    """All FOFE states h_1..h_T of ``xs`` ([T x d] or [T x b x d]), from h_0 = 0."""
    alpha = check_alpha(alpha)
    if xs.shape[0] < 1:
        raise DimensionError("FOFE needs at least one time step")
    h = xs[0]
    states = [h]
    for t in range(1, xs.shape[0]):
        h = fofe_step(alpha, h, xs[t])
        states.append(h)
    return ad.stack(states, axis=0)


def decay_matrix(alpha: float, T: int, dtype=np.float64) -> np.ndarray:
    """Lower-triangular D with D[t, s] = alpha**(t - s) for s <= t."""
    lag = np.arange(T)[:, None] - np.arange(T)[None, :]
    return np.where(lag >= 0, float(alpha) ** np.maximum(lag, 0), 0.0).astype(dtype)


def fofe_encode_matrix(alpha: float, xs: Tensor) -> Tensor:
    """Same states as :func:`fofe_encode_recurrent`, via one matrix product."""
    alpha = check_alpha(alpha)
    T = xs.shape[0]
    if T < 1:
        raise DimensionError("FOFE needs at least one time step")
    d = Tensor(decay_matrix(alpha, T, xs.dtype), dtype=xs.dtype)
    if xs.ndim == 2:
        return d @ xs
    flat = ad.reshape(xs, (T, -1))
    return ad.reshape(d @ flat, xs.shape)


_STEPS = {CellKind.GRU: gru_step, CellKind.MGU: mgu_step, CellKind.SGU: sgu_step}


class Cell:
    """A configured recurrent cell together with its weights."""

    def __init__(self, config: CellConfig, weights: dict[str, Tensor] | None = None,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        self.config = config
        if weights is None:
            weights = init_weights(config, rng if rng is not None else np.random.default_rng(0), dtype)
        expected = weight_shapes(config)
        got = {k: tuple(v.shape) for k, v in weights.items()}
        if got != expected:
            raise ConfigError(f"{config.kind.value} weights {got} do not match {expected}")
        self.weights = weights

    @property
    def kind(self) -> CellKind:
        return self.config.kind

    @property
    def hidden_size(self) -> int:
        return self.config.hidden_size

    def parameters(self) -> list[Tensor]:
        return list(self.weights.values())

    @property
    def num_params(self) -> int:
        return int(np.sum([w.size for w in self.weights.values()], dtype=np.int64))

    def zero_state(self, batch: int, dtype=np.float32) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden_size), dtype=dtype))

    def step(self, h_prev: Tensor, x: Tensor) -> Tensor:
        if self.kind is CellKind.FOFE:
            return fofe_step(self.config.alpha, h_prev, x)
        return _STEPS[self.kind](self.weights, h_prev, x)

    def __repr__(self):
        c = self.config
        return f"Cell({c.kind.value}, {c.input_size}->{c.hidden_size})"


class SequenceOutput(NamedTuple):
    outputs: Tensor  # [T x b x h]
    final: Tensor  # [b x h]


def _lengths(lengths, T: int, b: int) -> np.ndarray:
    if lengths is None:
        return np.full(b, T, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64).reshape(-1)
    if lengths.shape != (b,):
        raise DimensionError(f"{lengths.shape[0]} lengths for batch of {b}")
    if lengths.min(initial=0) < 0 or lengths.max(initial=0) > T:
        raise DimensionError(f"lengths must lie in [0, {T}]")
    return lengths


def run_sequence(cell: Cell, xs: Tensor, lengths=None, h0: Tensor | None = None,
                 fofe_mode: str = "matrix") -> SequenceOutput:
    """Step ``cell`` over time-major ``xs`` [T x b x d].

    Each row's state freezes once its length is reached, so padded positions
    repeat the last real state and ``final`` is length-correct. A row of
    length 0 keeps its initial state (zeros unless ``h0`` is given).
    """
    if xs.ndim != 3:
        raise DimensionError(f"run_sequence expects [T x b x d], got {xs.shape}")
    T, b, _ = xs.shape
    lengths = _lengths(lengths, T, b)
    if cell.kind is CellKind.FOFE and h0 is None and fofe_mode == "matrix" and T > 0:
        return _fofe_matrix_sequence(cell.config.alpha, xs, lengths)
    h = h0 if h0 is not None else cell.zero_state(b, xs.dtype)
    states = []
    longest = int(lengths.max(initial=0))
    for t in range(T):
        if t < longest:
            live = t < lengths
            nxt = cell.step(h, xs[t])
            h = nxt if live.all() else ad.where(live[:, None], nxt, h)
        states.append(h)
    return SequenceOutput(ad.stack(states, axis=0), h)


def _fofe_matrix_sequence(alpha: float, xs: Tensor, lengths: np.ndarray) -> SequenceOutput:
    T, b, _ = xs.shape
    states = fofe_encode_matrix(alpha, xs)
    if np.all(lengths == T):
        return SequenceOutput(states, states[T - 1])
    t = np.arange(T)[:, None]
    carry = np.minimum(t, np.maximum(lengths - 1, 0)[None, :])
    states = ad.take_time(states, carry)
    empty = lengths == 0
    if empty.any():
        zeros = Tensor(np.zeros(states.shape, dtype=states.dtype))
        states = ad.where(~empty[None, :, None], states, zeros)
    return SequenceOutput(states, states[T - 1])


def reverse_index(lengths: np.ndarray, T: int) -> np.ndarray:
    """[T x b] time index reversing each row's real prefix and leaving padding in place."""
    t = np.arange(T)[:, None]
    lengths = np.asarray(lengths)[None, :]
    return np.where(t < lengths, lengths - 1 - t, t)


def reverse_padded(xs: Tensor, lengths=None) -> Tensor:
    T, b = xs.shape[:2]
    lengths = _lengths(lengths, T, b)
    if np.all(lengths == T):
        return xs[::-1]
    return ad.take_time(xs, reverse_index(lengths, T))


def bi_encode(cell_fwd: Cell, cell_bwd: Cell, xs: Tensor, lengths=None) -> SequenceOutput:
    """Run one cell forward and one over each row's reversed prefix; concatenate.

    ``outputs[t]`` pairs the forward state after position t with the backward
    state after consuming positions from the row end down to t.
    """
    if cell_fwd.hidden_size != cell_bwd.hidden_size:
        raise DimensionError(
            f"bidirectional hidden sizes differ: {cell_fwd.hidden_size} vs {cell_bwd.hidden_size}"
        )
    T, b = xs.shape[:2]
    lengths = _lengths(lengths, T, b)
    fwd = run_sequence(cell_fwd, xs, lengths)
    bwd = run_sequence(cell_bwd, reverse_padded(xs, lengths), lengths)
    back_outputs = reverse_padded(bwd.outputs, lengths)
    return SequenceOutput(
        ad.concat([fwd.outputs, back_outputs], axis=2),
        ad.concat([fwd.final, bwd.final], axis=1),
    )
