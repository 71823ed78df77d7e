"""Flat named parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class ParameterVector:
    """Ordered trainable scalars with a name <-> index map."""

    names: tuple
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.shape != (len(self.names),):
            raise ContractError(
                f"{len(self.names)} names but values shape {vals.shape}")
        vals.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    def get(self, name):
        return float(self.values[self.index(name)])

    def as_dict(self):
        return {n: float(v) for n, v in zip(self.names, self.values)}

    def with_values(self, values):
        return ParameterVector(self.names, np.asarray(values, dtype=float))

    @classmethod
    def from_dict(cls, names, mapping, default=0.0):
        vals = np.array([mapping.get(n, default) for n in names], dtype=float)
        return cls(tuple(names), vals)
