"""Kernel ridge regression with the additive chi-squared kernel.

The kernel ``K(a, b) = -sum_j (a_j - b_j)^2 / (a_j + b_j)`` is zero on the
diagonal and non-positive, so the Gram matrix is indefinite; coefficients are
found by least squares on ``(K + lambda I) gamma = y`` rather than a Cholesky
factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml
from numba import njit

from .errors import DomainError, NumericalError


def chi2_kernel(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(gram(a[None, :], b[None, :])[0, 0])


def gram(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Kernel matrix between rows of ``A`` and rows of ``B``; 0/0 terms count as 0."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    num = (A[:, None, :] - B[None, :, :]) ** 2
    den = A[:, None, :] + B[None, :, :]
    terms = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return -terms.sum(axis=2)


@njit(cache=True, nogil=True)
def _predict_one(theta, anchors, gamma):
    total = 0.0
    for i in range(anchors.shape[0]):
        k = 0.0
        for j in range(anchors.shape[1]):
            den = theta[j] + anchors[i, j]
            if den > 0.0:
                diff = theta[j] - anchors[i, j]
                k -= diff * diff / den
        total += gamma[i] * k
    return total


@dataclass(frozen=True, eq=False)
class SurrogateModel:
    anchors: np.ndarray
    gamma: np.ndarray
    ridge_lambda: float
    train_residual: float = 0.0
    intercept: float = 0.0

    def __call__(self, theta) -> float:
        return predict(self, theta)

    def to_yaml(self, path: str | Path) -> None:
        doc = {
            "ridge_lambda": float(self.ridge_lambda),
            "train_residual": float(self.train_residual),
            "intercept": float(self.intercept),
            "anchors": [[float(v) for v in row] for row in self.anchors],
            "gamma": [float(v) for v in self.gamma],
        }
        Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))

    @classmethod
    def from_yaml(cls, path: str | Path) -> SurrogateModel:
        doc = yaml.safe_load(Path(path).read_text())
        return cls(np.array(doc["anchors"]), np.array(doc["gamma"]),
                   float(doc["ridge_lambda"]), float(doc.get("train_residual", 0.0)),
                   float(doc.get("intercept", 0.0)))


def fit(thetas, y, ridge_lambda: float = 1.0, *, fit_intercept: bool = False) -> SurrogateModel:
    """Solve ``(K + lambda I) gamma = y`` by least squares.

    With ``fit_intercept`` the targets are centered first and their mean is
    added back at prediction time; the kernel itself cannot represent a
    constant offset well (it vanishes on the diagonal).
    """
    X = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(X) == 0:
        raise DomainError("cannot fit a surrogate on an empty dataset")
    if len(X) != len(y):
        raise DomainError("one target per anchor required")
    if ridge_lambda < 0:
        raise DomainError("ridge_lambda must be >= 0")
    if len(np.unique(X, axis=0)) != len(X):
        raise DomainError("duplicate anchors")
    intercept = float(y.mean()) if fit_intercept else 0.0
    y = y - intercept
    system = gram(X, X) + ridge_lambda * np.eye(len(X))
    gamma, _, rank, _ = np.linalg.lstsq(system, y, rcond=None)
    residual = float(np.linalg.norm(system @ gamma - y))
    if rank < len(X) and residual > 1e-8 * (np.linalg.norm(y) + 1.0):
        raise NumericalError(
            f"kernel system is rank deficient (rank {rank} of {len(X)}, "
            f"lambda={ridge_lambda}); residual {residual:.3e}"
        )
    return SurrogateModel(X.copy(), gamma, float(ridge_lambda), residual, intercept)


def predict(model: SurrogateModel, theta) -> float:
    """Single-point evaluation; compiled because the optimizer calls it hundreds of times."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    anchors = np.ascontiguousarray(model.anchors, dtype=np.float64)
    gamma = np.ascontiguousarray(model.gamma, dtype=np.float64)
    return model.intercept + float(_predict_one(theta, anchors, gamma))


def predict_many(model: SurrogateModel, thetas) -> np.ndarray:
    return model.intercept + gram(thetas, model.anchors) @ model.gamma


def r_squared(model: SurrogateModel, thetas, y) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) == 0:
        raise DomainError("holdout set is empty")
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0.0:
        raise DomainError("R^2 is undefined for constant targets")
    ss_res = float(((y - predict_many(model, thetas)) ** 2).sum())
    return 1.0 - ss_res / ss_tot
