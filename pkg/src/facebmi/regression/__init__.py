from .data import TrainMatrix
from .ridge import DEFAULT_LAMBDA, LAMBDA_GRID, RidgeModel, fit_ridge, ridge_objective, select_lambda
from .svr import Kernel, SvrModel, fit_svr, kkt_residuals, solve_svr_dual, svr_dual_objective
from .estimators import EpsilonSVR, RidgeRegressor, load_regressor, predict

__all__ = [
    "DEFAULT_LAMBDA",
    "EpsilonSVR",
    "Kernel",
    "LAMBDA_GRID",
    "RidgeModel",
    "RidgeRegressor",
    "SvrModel",
    "TrainMatrix",
    "fit_ridge",
    "fit_svr",
    "kkt_residuals",
    "load_regressor",
    "predict",
    "ridge_objective",
    "select_lambda",
    "solve_svr_dual",
    "svr_dual_objective",
]
