from __future__ import annotations

import numpy as np

from ..autodiff import Tensor
from .spec import ModelSpec


class Model:
    """Parameter bookkeeping shared by the HRED and R-NET assemblies.

    Subclasses register named layer groups; each group maps a local name to a
    tensor. Only tensors with ``requires_grad`` count as trainable.
    """

    def __init__(self, spec: ModelSpec, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers: dict[str, dict[str, Tensor]] = {}

    def register(self, layer: str, tensors: dict[str, Tensor]) -> None:
        self.layers[layer] = dict(tensors)

    def named_tensors(self) -> dict[str, Tensor]:
        return {f"{layer}.{k}": t for layer, group in self.layers.items() for k, t in group.items()}

    def named_parameters(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.named_tensors().items() if t.requires_grad}

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def param_breakdown(self) -> dict[str, int]:
        return {
            layer: int(sum(t.size for t in group.values() if t.requires_grad))
            for layer, group in self.layers.items()
        }

    @property
    def num_params(self) -> int:
        return sum(self.param_breakdown().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_tensors().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        mine = self.named_tensors()
        if set(state) != set(mine):
            raise KeyError(f"state keys differ: {sorted(set(state) ^ set(mine))}")
        for k, t in mine.items():
            arr = np.asarray(state[k])
            if arr.shape != t.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.shape}")
            t.data[...] = arr

    def __repr__(self):
        return f"{type(self).__name__}({self.spec.variant}, params={self.num_params})"
