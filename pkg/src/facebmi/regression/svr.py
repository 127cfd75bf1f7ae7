"""Epsilon-insensitive support vector regression solved by SMO on the dual.

The dual is written over 2n variables ``a = (alpha, alpha*)`` with signs
``s = (+1, ..., -1, ...)``::

    min_a  0.5 a'Qa + p'a    s.t.  s'a = 0,  0 <= a <= C
    Q_tu = s_t s_u K(x_t, x_u),  p = (eps - y, eps + y)

Working pairs are chosen by maximal violation with second-order gain, and
the loop stops once the KKT gap ``max_up(-s G) - min_low(-s G)`` is below
``tol``. The dual coefficients returned are ``beta = alpha - alpha*``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from numba import njit

from ..exceptions import ConvergenceError, ShapeError
from ..modelio import load_model, save_model
from .data import TrainMatrix, as_train_matrix

TAU = 1e-12
DEFAULT_MAX_ITER = 10_000_000


@dataclass(frozen=True)
class Kernel:
    kind: str = "linear"
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not (self.gamma and self.gamma > 0):
            raise ValueError("rbf kernel needs gamma > 0")

    def __call__(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return A @ B.T
        sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * (A @ B.T)
        return np.exp(-self.gamma * np.maximum(sq, 0.0))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma}


def as_kernel(kernel) -> Kernel:
    if isinstance(kernel, Kernel):
        return kernel
    if isinstance(kernel, str):
        return Kernel(kernel)
    if isinstance(kernel, dict):
        return Kernel(kernel["kind"], kernel.get("gamma"))
    kind, gamma = kernel
    return Kernel(kind, gamma)


@dataclass(frozen=True, eq=False)
class SvrModel:
    dual_coeffs: np.ndarray
    support_vectors: np.ndarray
    intercept: float
    kernel: Kernel
    epsilon: float
    c: float
    backbone_id: str = ""
    iterations: int = 0
    gap: float = 0.0
    shift: np.ndarray | None = None  # optional input standardization
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.dual_coeffs.shape[0] != self.support_vectors.shape[0]:
            raise ShapeError("one dual coefficient per support vector required")
        if (self.shift is None) != (self.scale is None):
            raise ValueError("shift and scale must be given together")

    @property
    def dim(self) -> int:
        return int(self.support_vectors.shape[1])

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise ShapeError(f"model expects {self.dim} features, got {X.shape[1]}")
        if self.shift is not None:
            X = (X - self.shift) / self.scale
        if self.dual_coeffs.size == 0:
            return np.full(X.shape[0], self.intercept)
        return self.kernel(X, self.support_vectors) @ self.dual_coeffs + self.intercept

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.decision(X)

    def linear_weights(self) -> np.ndarray:
        if self.kernel.kind != "linear":
            raise ValueError("only a linear-kernel SVR has an explicit weight vector")
        if self.shift is not None:
            raise ValueError("weights of a standardized model live in the scaled space")
        return self.support_vectors.T @ self.dual_coeffs

    def save(self, path: str | Path, extra: dict | None = None) -> str:
        arrays = {
            "dual_coeffs": self.dual_coeffs,
            "support_vectors": self.support_vectors,
            "intercept": np.array([self.intercept]),
        }
        if self.shift is not None:
            arrays["shift"] = self.shift
            arrays["scale"] = self.scale
        return save_model(
            path,
            "svr",
            arrays,
            backbone_id=self.backbone_id,
            dim=self.dim,
            hyperparams={"kernel": self.kernel.to_dict(), "epsilon": self.epsilon, "c": self.c},
            extra={**(extra or {}), "iterations": self.iterations, "gap": self.gap},
        )

    @classmethod
    def from_arrays(cls, header: dict, arrays: dict) -> "SvrModel":
        hp = header["hyperparams"]
        sv = arrays["support_vectors"].reshape(-1, header["dim"])
        return cls(arrays["dual_coeffs"], sv, float(arrays["intercept"][0]), as_kernel(hp["kernel"]),
                   float(hp["epsilon"]), float(hp["c"]), header.get("backbone_id") or "",
                   header.get("extra", {}).get("iterations", 0), header.get("extra", {}).get("gap", 0.0),
                   arrays.get("shift"), arrays.get("scale"))

    @classmethod
    def load(cls, path: str | Path) -> "SvrModel":
        header, arrays = load_model(path)
        if header["type"] != "svr":
            raise ValueError(f"{path} holds a {header['type']!r} model, not svr")
        return cls.from_arrays(header, arrays)


@dataclass
class DualSolution:
    beta: np.ndarray
    intercept: float
    iterations: int
    gap: float


@njit(cache=True)
def _smo(K, y, c, epsilon, tol, max_iter):
    n = y.shape[0]
    m = 2 * n
    a = np.zeros(m)
    G = np.empty(m)
    s = np.empty(m)
    QD = np.empty(m)
    for t in range(n):
        G[t] = epsilon - y[t]
        G[t + n] = epsilon + y[t]
        s[t] = 1.0
        s[t + n] = -1.0
        QD[t] = K[t, t]
        QD[t + n] = K[t, t]
    it = 0
    gap = np.inf
    converged = False
    while True:
        gmax = -np.inf
        gmin = np.inf
        i = -1
        for t in range(m):
            v = -s[t] * G[t]
            if (s[t] > 0 and a[t] < c) or (s[t] < 0 and a[t] > 0):
                if v > gmax:
                    gmax = v
                    i = t
            if (s[t] > 0 and a[t] > 0) or (s[t] < 0 and a[t] < c):
                if v < gmin:
                    gmin = v
        if i < 0 or gmin == np.inf:
            gap = 0.0
            converged = True
            break
        gap = gmax - gmin
        if gap < tol:
            converged = True
            break
        if it >= max_iter:
            break
        ki = i % n
        # second-order choice of j among violating members of the low set
        j = -1
        best = np.inf
        for half in range(2):
            st = 1.0 if half == 0 else -1.0
            off = half * n
            for k in range(n):
                t = off + k
                if (st > 0 and a[t] > 0) or (st < 0 and a[t] < c):
                    v = -st * G[t]
                    if v < gmax:
                        b = gmax - v
                        quad = QD[i] + QD[t] - 2.0 * K[ki, k]
                        if quad <= 0:
                            quad = TAU
                        obj = -(b * b) / quad
                        if obj < best:
                            best = obj
                            j = t
        kj = j % n
        q_ij = s[i] * s[j] * K[ki, kj]
        ai_old = a[i]
        aj_old = a[j]
        if s[i] != s[j]:
            qc = QD[i] + QD[j] + 2.0 * q_ij
            if qc <= 0:
                qc = TAU
            delta = (-G[i] - G[j]) / qc
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0:
                if a[i] > c:
                    a[i] = c
                    a[j] = c - diff
            elif a[j] > c:
                a[j] = c
                a[i] = c + diff
        else:
            qc = QD[i] + QD[j] - 2.0 * q_ij
            if qc <= 0:
                qc = TAU
            delta = (G[i] - G[j]) / qc
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > c:
                if a[i] > c:
                    a[i] = c
                    a[j] = total - c
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > c:
                if a[j] > c:
                    a[j] = c
                    a[i] = total - c
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total
        dai = (a[i] - ai_old) * s[i]
        daj = (a[j] - aj_old) * s[j]
        for k in range(n):
            d = K[ki, k] * dai + K[kj, k] * daj
            G[k] += d
            G[k + n] -= d
        it += 1
    return a, G, it, gap, converged


def solve_svr_dual(K: np.ndarray, y: np.ndarray, c: float, epsilon: float,
                   tol: float = 1e-3, max_iter: int = DEFAULT_MAX_ITER) -> DualSolution:
    """SMO over the 2n-variable dual for a precomputed kernel matrix ``K``."""
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.shape[0]
    a, G, it, gap, converged = _smo(K, y, float(c), float(epsilon), float(tol), int(max_iter))
    if not converged:
        raise ConvergenceError("SVR solver hit its iteration cap", gap, it)
    s = np.r_[np.ones(n), -np.ones(n)]
    # intercept: mean over free variables, else midpoint of the feasible interval
    sG = s * G
    free = (a > 0) & (a < c)
    if free.any():
        rho = float(np.mean(sG[free]))
    else:
        at_up = a >= c
        at_low = a <= 0
        ub_mask = (at_up & (s < 0)) | (at_low & (s > 0))
        lb_mask = (at_up & (s > 0)) | (at_low & (s < 0))
        ub = np.min(sG[ub_mask]) if ub_mask.any() else np.inf
        lb = np.max(sG[lb_mask]) if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2)
    beta = a[:n] - a[n:]
    return DualSolution(beta, -rho, int(it), max(float(gap), 0.0))


def fit_svr(
    data: TrainMatrix | tuple,
    kernel: Kernel | str = "linear",
    c: float = 1.0,
    epsilon: float = 0.1,
    tol: float = 1e-3,
    max_iter: int = DEFAULT_MAX_ITER,
    backbone_id: str = "",
    keep_all: bool = False,
) -> SvrModel:
    """Fit epsilon-SVR; only rows with nonzero dual coefficients are kept unless ``keep_all``."""
    data = as_train_matrix(data)
    if not c > 0:
        raise ValueError("c must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if data.X.shape[0] < 2:
        raise ValueError(f"SVR needs at least two training samples, got n_samples={data.X.shape[0]}")
    kernel = as_kernel(kernel)
    K = kernel(data.X, data.X)
    sol = solve_svr_dual(K, data.y, c, epsilon, tol, max_iter)
    keep = np.ones_like(sol.beta, dtype=bool) if keep_all else sol.beta != 0
    return SvrModel(sol.beta[keep].copy(), data.X[keep].copy(), sol.intercept, kernel, float(epsilon),
                    float(c), backbone_id, sol.iterations, sol.gap)


def svr_dual_objective(beta: np.ndarray, K: np.ndarray, y: np.ndarray, epsilon: float) -> float:
    """0.5 beta'K beta + eps * |beta|_1 - y'beta (the minimized dual)."""
    return float(0.5 * beta @ K @ beta + epsilon * np.abs(beta).sum() - y @ beta)


def kkt_residuals(beta: np.ndarray, intercept: float, K: np.ndarray, y: np.ndarray,
                  c: float, epsilon: float, bound_tol: float = 1e-9) -> np.ndarray:
    """Per-sample violation of the epsilon-SVR optimality conditions (0 when satisfied)."""
    r = y - (K @ beta + intercept)
    tol = bound_tol * max(c, 1.0)
    zero = np.abs(beta) <= tol
    at_c = beta >= c - tol
    at_neg_c = beta <= -c + tol
    pos_free = (beta > tol) & ~at_c
    neg_free = (beta < -tol) & ~at_neg_c
    out = np.zeros_like(r)
    out[zero] = np.maximum(0.0, np.abs(r[zero]) - epsilon)
    out[pos_free] = np.abs(r[pos_free] - epsilon)
    out[neg_free] = np.abs(r[neg_free] + epsilon)
    out[at_c] = np.maximum(0.0, epsilon - r[at_c])
    out[at_neg_c] = np.maximum(0.0, r[at_neg_c] + epsilon)
    return out
