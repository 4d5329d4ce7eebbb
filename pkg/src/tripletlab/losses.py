"""Shared loss containers."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TripletParams:
    margin: float = 0.3
    scale: float = 12.0

    def __post_init__(self):
        if not np.isfinite(self.margin) or self.margin < 0:
            raise ValueError(f"margin must be finite and >= 0, got {self.margin}")
        if not np.isfinite(self.scale) or self.scale <= 0:
            raise ValueError(f"scale must be finite and > 0, got {self.scale}")


@dataclass
class LossResult:
    """Loss value with its gradient per input embedding row.

    ``weight_grad`` is set by the classification losses (same D x C layout as
    the weights). ``exp_counts`` is set by the unified batch-all loss: the
    number of exponentials evaluated for each anchor.
    """

    value: float
    grad: np.ndarray
    weight_grad: np.ndarray | None = None
    exp_counts: np.ndarray | None = None
