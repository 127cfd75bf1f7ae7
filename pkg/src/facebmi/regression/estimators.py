"""scikit-learn estimators over the ridge and SVR solvers."""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from ..exceptions import ShapeError
from ..modelio import load_model
from .ridge import DEFAULT_LAMBDA, LAMBDA_GRID, RidgeModel, fit_ridge, select_lambda
from .svr import DEFAULT_MAX_ITER, Kernel, SvrModel, fit_svr


class RidgeRegressor(RegressorMixin, BaseEstimator):
    """Closed-form ridge regression.

    ``lam`` may be ``"auto"`` to pick from ``lambda_grid`` on a seeded
    validation fold of the training data.
    """

    def __init__(self, lam=DEFAULT_LAMBDA, fit_intercept=True, lambda_grid=LAMBDA_GRID,
                 validation_fraction=0.2, random_state=0, backbone_id=""):
        self.lam = lam
        self.fit_intercept = fit_intercept
        self.lambda_grid = lambda_grid
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.backbone_id = backbone_id

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        lam = self.lam
        self.lambda_scores_ = None
        if lam == "auto":
            lam, self.lambda_scores_ = select_lambda(
                (X, y), self.lambda_grid, self.validation_fraction, self.random_state, self.fit_intercept
            )
        self.model_ = fit_ridge((X, y), float(lam), self.fit_intercept, self.backbone_id)
        self.coef_ = self.model_.weights
        self.intercept_ = self.model_.intercept
        self.lam_ = self.model_.lam
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.model_.predict(X)


class EpsilonSVR(RegressorMixin, BaseEstimator):
    """Epsilon-SVR trained with the package's SMO solver.

    With ``standardize`` the features are scaled to zero mean and unit
    variance (statistics from the training data) before the kernel.
    """

    def __init__(self, kernel="linear", gamma=None, C=1.0, epsilon=0.1, tol=1e-3,
                 max_iter=DEFAULT_MAX_ITER, standardize=False, backbone_id=""):
        self.kernel = kernel
        self.gamma = gamma
        self.C = C
        self.epsilon = epsilon
        self.tol = tol
        self.max_iter = max_iter
        self.standardize = standardize
        self.backbone_id = backbone_id

    def _scale(self, X):
        if self.standardize:
            return (X - self.mean_) / self.scale_
        return X

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0)
            self.scale_ = np.where(sd > 0, sd, 1.0)
        gamma = self.gamma
        if self.kernel == "rbf" and gamma is None:
            gamma = 1.0 / (X.shape[1] * max(float(self._scale(X).var()), 1e-12))
        kernel = Kernel(self.kernel, gamma if self.kernel == "rbf" else None)
        model = fit_svr((self._scale(X), y), kernel, self.C, self.epsilon, self.tol, self.max_iter,
                        self.backbone_id)
        if self.standardize:
            model = replace(model, shift=self.mean_, scale=self.scale_)
        self.model_ = model
        self.dual_coef_ = self.model_.dual_coeffs
        self.support_vectors_ = self.model_.support_vectors
        self.intercept_ = self.model_.intercept
        self.n_iter_ = self.model_.iterations
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return self.model_.predict(X)


def predict(model, f) -> float:
    """Predict BMI for one feature vector (``FeatureVector`` or array)."""
    values = np.asarray(getattr(f, "values", f), dtype=np.float64).ravel()
    if values.shape[0] != model.dim:
        raise ShapeError(f"model expects {model.dim} features, got {values.shape[0]}")
    out = float(model.predict(values[None, :])[0])
    if not np.isfinite(out):
        raise ValueError("prediction is not finite")
    return out


def load_regressor(path) -> RidgeModel | SvrModel:
    header, arrays = load_model(path)
    if header["type"] == "ridge":
        return RidgeModel.from_arrays(header, arrays)
    if header["type"] == "svr":
        return SvrModel.from_arrays(header, arrays)
    raise ValueError(f"{path} holds a {header['type']!r} model, not a regression head")
