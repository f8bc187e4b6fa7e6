"""Regressors backing both the score functions and the agent utilities.

Two predictors, both with fixed hyperparameters (no tuning anywhere — the
query densities must stay exactly known to the weight computations):

* closed-form ridge regression, plus the affine-in-label residual identity
  that makes full conformal prediction a single factorization per instance;
* Gaussian-process regression with a dot-product kernel (constant bias
  variance) and white observation noise, used for uncertainty-driven
  querying.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .core import Bag
from .errors import NumericalError, ParameterError, ShapeError

__all__ = [
    "RidgeModel",
    "GaussianProcessModel",
    "design_matrix",
    "ridge_fit",
    "ridge_residual_affine",
    "ridge_residual_affine_all",
    "gp_fit",
    "gp_fit_predict",
    "GP_BIAS_VARIANCE",
    "GP_NOISE_VARIANCE",
]

GP_BIAS_VARIANCE = 0.0025
GP_NOISE_VARIANCE = 0.0025
_JITTER = 1e-10


def design_matrix(data: Bag) -> Tuple[np.ndarray, np.ndarray]:
    """Stack a bag into (X, y); raises if feature dimensions disagree."""
    pts = data.points
    if not pts:
        raise ParameterError("bag is empty")
    dims = {p.x.shape[0] for p in pts}
    if len(dims) != 1:
        raise ShapeError(f"inconsistent feature dimensions: {sorted(dims)}")
    X = np.stack([p.x for p in pts])
    y = np.array([p.y for p in pts], dtype=np.float64)
    return X, y


@dataclass(frozen=True, eq=False)
class RidgeModel:
    """Linear model minimizing sum of squared errors + reg * ||w||^2."""

    coefficients: np.ndarray
    regularization: float
    fitted_on: Optional[Bag] = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.coefficients.shape[0]:
            raise ShapeError(
                f"query dimension {X.shape[1]} != model dimension {self.coefficients.shape[0]}"
            )
        return X @ self.coefficients

    def predict_one(self, x: np.ndarray) -> float:
        return float(np.asarray(x, dtype=np.float64) @ self.coefficients)


def _ridge_solve(X: np.ndarray, rhs: np.ndarray, regularization: float) -> np.ndarray:
    """Solve (X^T X + reg I) out = rhs by Cholesky, with a one-shot jitter retry."""
    gram = X.T @ X + regularization * np.eye(X.shape[1])
    try:
        return cho_solve(cho_factor(gram), rhs)
    except LinAlgError:
        try:
            return cho_solve(cho_factor(gram + _JITTER * np.eye(X.shape[1])), rhs)
        except LinAlgError as exc:
            raise NumericalError(
                f"ridge normal equations not positive definite even with jitter "
                f"(dim {X.shape[1]}, reg {regularization})"
            ) from exc


def ridge_fit(data: Bag, regularization: float) -> RidgeModel:
    """Closed-form ridge coefficients; deterministic and order-invariant."""
    if regularization <= 0 or not np.isfinite(regularization):
        raise ParameterError(f"regularization must be a positive real, got {regularization}")
    X, y = design_matrix(data)
    coef = _ridge_solve(X, X.T @ y, regularization)
    return RidgeModel(coef, float(regularization), data)


def ridge_residual_affine_all(
    observed: Bag, x_star: np.ndarray, regularization: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Residuals of the candidate-augmented ridge fit, as affine functions of
    the candidate's label.

    Augment ``observed`` with (x_star, y) for a symbolic label y and refit.
    Because the Gram matrix does not involve labels, the coefficient vector —
    and hence every point's residual — is affine in y.  Returns (a, b) arrays
    of length |observed| + 1 (candidate last) with signed residual of point i
    equal to a[i] + b[i]*y; the conformity score is its absolute value.
    """
    if regularization <= 0 or not np.isfinite(regularization):
        raise ParameterError(f"regularization must be a positive real, got {regularization}")
    X_obs, y_obs = design_matrix(observed)
    x_star = np.asarray(x_star, dtype=np.float64).reshape(-1)
    if x_star.shape[0] != X_obs.shape[1]:
        raise ShapeError(
            f"candidate dimension {x_star.shape[0]} != data dimension {X_obs.shape[1]}"
        )
    X_aug = np.vstack([X_obs, x_star[None, :]])
    m = X_aug.shape[0]
    # Coefficients beta(y) = M @ [y_obs; y] = C + g*y with M = (X'X + reg I)^-1 X'.
    M = _ridge_solve(X_aug, X_aug.T, regularization)
    C = M[:, : m - 1] @ y_obs
    g = M[:, m - 1]
    pred_const = X_aug @ C
    pred_slope = X_aug @ g
    a = np.empty(m)
    b = np.empty(m)
    a[: m - 1] = y_obs - pred_const[: m - 1]
    b[: m - 1] = -pred_slope[: m - 1]
    a[m - 1] = -pred_const[m - 1]
    b[m - 1] = 1.0 - pred_slope[m - 1]
    return a, b


def ridge_residual_affine(
    observed: Bag, x_star: np.ndarray, regularization: float, index: int
) -> Tuple[float, float]:
    """(a, b) for a single point index (candidate = index |observed|)."""
    a, b = ridge_residual_affine_all(observed, x_star, regularization)
    if not 0 <= index < a.shape[0]:
        raise ParameterError(f"point index {index} outside [0, {a.shape[0]})")
    return float(a[index]), float(b[index])


class GaussianProcessModel:
    """GP regression with kernel k(a, b) = bias_variance + a.b and white
    observation noise on the training diagonal.

    Hyperparameters are fixed at construction; predictions are for the
    noise-free latent function (no observation noise added at query points).
    An empty training bag yields the prior: mean 0, variance bias + x.x.
    """

    def __init__(
        self,
        data: Optional[Bag] = None,
        *,
        bias_variance: float = GP_BIAS_VARIANCE,
        noise_variance: float = GP_NOISE_VARIANCE,
    ):
        if bias_variance < 0 or noise_variance <= 0:
            raise ParameterError(
                "need bias_variance >= 0 and noise_variance > 0, got "
                f"{bias_variance}, {noise_variance}"
            )
        self.bias_variance = float(bias_variance)
        self.noise_variance = float(noise_variance)
        self._X: Optional[np.ndarray] = None
        self._chol = None
        self._alpha: Optional[np.ndarray] = None
        if data is not None and len(data.points) > 0:
            X, y = design_matrix(data)
            K = self.bias_variance + X @ X.T
            K[np.diag_indices_from(K)] += self.noise_variance
            try:
                chol = cho_factor(K)
            except LinAlgError:
                K[np.diag_indices_from(K)] += _JITTER
                try:
                    chol = cho_factor(K)
                except LinAlgError as exc:
                    cond = np.linalg.cond(K)
                    raise NumericalError(
                        f"GP Gram matrix not positive definite with jitter "
                        f"(size {K.shape[0]}, condition number {cond:.3e})"
                    ) from exc
            self._X = X
            self._chol = chol
            self._alpha = cho_solve(chol, y)

    def predict(self, Q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior (mean, variance) of the latent function at query rows."""
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        prior_var = self.bias_variance + np.einsum("ij,ij->i", Q, Q)
        if self._X is None:
            return np.zeros(Q.shape[0]), prior_var
        if Q.shape[1] != self._X.shape[1]:
            raise ShapeError(
                f"query dimension {Q.shape[1]} != training dimension {self._X.shape[1]}"
            )
        Kq = self.bias_variance + Q @ self._X.T
        mean = Kq @ self._alpha
        solved = cho_solve(self._chol, Kq.T)
        var = prior_var - np.einsum("ij,ji->i", Kq, solved)
        return mean, np.maximum(var, 0.0)

    def predict_one(self, x: np.ndarray) -> Tuple[float, float]:
        mean, var = self.predict(np.asarray(x, dtype=np.float64)[None, :])
        return float(mean[0]), float(var[0])


def gp_fit(
    data: Bag,
    *,
    bias_variance: float = GP_BIAS_VARIANCE,
    noise_variance: float = GP_NOISE_VARIANCE,
) -> GaussianProcessModel:
    return GaussianProcessModel(data, bias_variance=bias_variance, noise_variance=noise_variance)


def gp_fit_predict(
    data: Bag,
    query: np.ndarray,
    *,
    bias_variance: float = GP_BIAS_VARIANCE,
    noise_variance: float = GP_NOISE_VARIANCE,
) -> Tuple[float, float]:
    """Posterior (mean, variance) at one query point; empty data gives the prior."""
    model = GaussianProcessModel(
        data if data.points else None,
        bias_variance=bias_variance,
        noise_variance=noise_variance,
    )
    return model.predict_one(np.asarray(query, dtype=np.float64).reshape(-1))
