"""Named parameter registry shared by the LM and the projector."""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from radkg.errors import ShapeError
from radkg.tensor import Tensor


class ParamSet:
    """Ordered name -> Tensor map with per-parameter decay flags.

    Registration order is the initialization draw order, so two param
    sets built from the same config and seed are element-identical.
    """

    def __init__(self) -> None:
        self._tensors: Dict[str, Tensor] = {}
        self._decay: set = set()

    def add(self, name: str, data: np.ndarray, decay: bool) -> Tensor:
        if name in self._tensors:
            raise ShapeError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._tensors[name] = t
        if decay:
            self._decay.add(name)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> Tuple[str, ...]:
        return tuple(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def decays(self, name: str) -> bool:
        return name in self._decay

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def set_trainable(self, flag: bool) -> None:
        for t in self._tensors.values():
            t.requires_grad = flag

    def n_params(self) -> int:
        return sum(t.data.size for t in self._tensors.values())

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: t.data for name, t in self._tensors.items()}

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        """Copy values in place; names and shapes must match exactly."""
        mine = set(self._tensors)
        theirs = set(arrays)
        if mine != theirs:
            missing = sorted(mine - theirs)
            extra = sorted(theirs - mine)
            raise ShapeError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, t in self._tensors.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name!r}: shape {src.shape} does not match {t.data.shape}"
                )
            np.copyto(t.data, src)
