from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """Nonnegative class probabilities summing to one."""

    probabilities: np.ndarray

    def __post_init__(self):
        p = np.array(self.probabilities, dtype=np.float64).reshape(-1)
        if p.size < 1:
            raise ContractError("distribution needs at least one class")
        if not np.isfinite(p).all() or (p < 0).any():
            raise ContractError("probabilities must be finite and nonnegative")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ContractError(f"probabilities sum to {p.sum()!r}, not 1")
        p.flags.writeable = False
        object.__setattr__(self, "probabilities", p)

    @property
    def k(self) -> int:
        return self.probabilities.size

    def argmax(self) -> int:
        return int(np.argmax(self.probabilities))

    def peak(self) -> float:
        return float(self.probabilities.max())

    def __eq__(self, other):
        if not isinstance(other, ClassDistribution):
            return NotImplemented
        return np.array_equal(self.probabilities, other.probabilities)
