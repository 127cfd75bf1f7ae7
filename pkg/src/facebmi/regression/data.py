from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import ShapeError


@dataclass(frozen=True, eq=False)
class TrainMatrix:
    """Feature matrix ``X`` (n x d) aligned with BMI targets ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] < 1:
            raise ShapeError(f"X must be a non-empty 2-D matrix, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ShapeError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("training data contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)


def as_train_matrix(data) -> TrainMatrix:
    if isinstance(data, TrainMatrix):
        return data
    X, y = data
    return TrainMatrix(X, y)
