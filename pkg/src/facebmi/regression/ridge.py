"""Closed-form ridge regression: minimize lam * ||w||^2 + sum_i (w.x_i + b - y_i)^2."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..exceptions import RankDeficientError, ShapeError
from ..modelio import load_model, save_model
from .data import TrainMatrix, as_train_matrix

DEFAULT_LAMBDA = 1.0
LAMBDA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass(frozen=True, eq=False)
class RidgeModel:
    weights: np.ndarray
    intercept: float
    lam: float
    backbone_id: str = ""

    @property
    def dim(self) -> int:
        return int(self.weights.shape[0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.dim:
            raise ShapeError(f"model expects {self.dim} features, got {X.shape[-1]}")
        return X @ self.weights + self.intercept

    def save(self, path: str | Path, extra: dict | None = None) -> str:
        return save_model(
            path,
            "ridge",
            {"weights": self.weights, "intercept": np.array([self.intercept])},
            backbone_id=self.backbone_id,
            dim=self.dim,
            hyperparams={"lambda": self.lam},
            extra=extra,
        )

    @classmethod
    def from_arrays(cls, header: dict, arrays: dict) -> "RidgeModel":
        return cls(arrays["weights"], float(arrays["intercept"][0]), float(header["hyperparams"]["lambda"]),
                   header.get("backbone_id") or "")

    @classmethod
    def load(cls, path: str | Path) -> "RidgeModel":
        header, arrays = load_model(path)
        if header["type"] != "ridge":
            raise ValueError(f"{path} holds a {header['type']!r} model, not ridge")
        return cls.from_arrays(header, arrays)


def _solve_spd(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.linalg.solve(A, b)
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def ridge_weights(X: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """Solve (X'X + lam I) w = X'y; uses the n x n dual system when d > n."""
    n, d = X.shape
    if lam == 0:
        rank = np.linalg.matrix_rank(X)
        if rank < d:
            raise RankDeficientError(f"design has rank {rank} < {d} columns and lambda = 0")
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        return w
    if d <= n:
        return _solve_spd(X.T @ X + lam * np.eye(d), X.T @ y)
    return X.T @ _solve_spd(X @ X.T + lam * np.eye(n), y)


def fit_ridge(data: TrainMatrix | tuple, lam: float = DEFAULT_LAMBDA, fit_intercept: bool = True,
              backbone_id: str = "") -> RidgeModel:
    """Fit ridge regression in closed form.

    With ``fit_intercept`` the columns of X and y are centered first, which
    leaves the intercept unpenalized.
    """
    data = as_train_matrix(data)
    if not (lam >= 0 and np.isfinite(lam)):
        raise ValueError(f"lambda must be a finite non-negative number, got {lam}")
    X, y = data.X, data.y
    if fit_intercept:
        x_mean, y_mean = X.mean(axis=0), y.mean()
        w = ridge_weights(X - x_mean, y - y_mean, lam)
        b = float(y_mean - x_mean @ w)
    else:
        w = ridge_weights(X, y, lam)
        b = 0.0
    return RidgeModel(w, b, float(lam), backbone_id)


def ridge_objective(w: np.ndarray, intercept: float, data: TrainMatrix | tuple, lam: float) -> float:
    data = as_train_matrix(data)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (data.X.shape[1],):
        raise ShapeError(f"w has shape {w.shape}, data has {data.X.shape[1]} features")
    r = data.X @ w + intercept - data.y
    return float(lam * (w @ w) + r @ r)


def select_lambda(
    data: TrainMatrix | tuple,
    grid=LAMBDA_GRID,
    validation_fraction: float = 0.2,
    seed: int = 0,
    fit_intercept: bool = True,
) -> tuple[float, dict[float, float]]:
    """Pick lambda from ``grid`` by validation MAE on a seeded holdout fold."""
    data = as_train_matrix(data)
    n = data.X.shape[0]
    n_val = max(1, int(round(n * validation_fraction)))
    if n - n_val < 1:
        raise ValueError(f"not enough samples to hold out a validation fold (n_samples={n})")
    perm = np.random.default_rng(seed).permutation(n)
    val, tr = perm[:n_val], perm[n_val:]
    scores = {}
    for lam in grid:
        model = fit_ridge((data.X[tr], data.y[tr]), lam, fit_intercept)
        scores[float(lam)] = float(np.mean(np.abs(model.predict(data.X[val]) - data.y[val])))
    best = min(scores, key=lambda k: (scores[k], k))
    return best, scores
