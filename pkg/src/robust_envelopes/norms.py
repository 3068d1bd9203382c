from __future__ import annotations

from enum import Enum

import numpy as np


class NormKind(str, Enum):
    L1 = "1"
    L2 = "2"
    LINF = "inf"

    @property
    def dual(self) -> "NormKind":
        if self is NormKind.L1:
            return NormKind.LINF
        if self is NormKind.LINF:
            return NormKind.L1
        return NormKind.L2

    @property
    def order(self) -> float:
        return {NormKind.L1: 1, NormKind.L2: 2, NormKind.LINF: np.inf}[self]

    def evaluate(self, values: np.ndarray) -> float:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size == 0:
            return 0.0
        return float(np.linalg.norm(values, ord=self.order))

    @classmethod
    def parse(cls, raw: object) -> "NormKind":
        text = str(raw).strip().lower()
        aliases = {"1": cls.L1, "l1": cls.L1, "2": cls.L2, "l2": cls.L2,
                   "inf": cls.LINF, "linf": cls.LINF, "infinity": cls.LINF}
        if text not in aliases:
            raise ValueError(f"Unsupported norm: {raw!r} (expected 1, 2 or inf)")
        return aliases[text]
