"""Dense symmetric Galerkin matrices with assembly metadata."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("hypersingular", "mass", "h1stiffness", "reference")


@dataclass
class SymmetricOperator:
    matrix: np.ndarray
    kind: str
    alpha: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("operator matrix must be square")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def asymmetry(self) -> float:
        """max|A - A^T| relative to max|A|."""
        scale = np.max(np.abs(self.matrix)) if self.n else 1.0
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(self.matrix - self.matrix.T)) / scale)

    def dump(self, path) -> None:
        """Plain text: N, then the lower triangle row by row, 17 digits."""
        il = np.tril_indices(self.n)
        with open(path, "w") as fh:
            fh.write(f"{self.n}\n")
            for v in self.matrix[il]:
                fh.write(f"{v:.17g}\n")

    @classmethod
    def load(cls, path, kind="hypersingular", alpha=0.0) -> "SymmetricOperator":
        with open(path) as fh:
            n = int(fh.readline())
            vals = np.array([float(line) for line in fh if line.strip()])
        if vals.size != n * (n + 1) // 2:
            raise ValueError(f"{path}: expected {n * (n + 1) // 2} values, got {vals.size}")
        A = np.zeros((n, n))
        A[np.tril_indices(n)] = vals
        A = A + np.tril(A, -1).T
        return cls(A, kind, alpha)
