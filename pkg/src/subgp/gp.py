"""Zero-mean Gaussian-process regression with a separable Gaussian kernel.

The correlation kernel is exp(-sum_p (x_p - x'_p)^2 / phi_p) with one
length-scale per input dimension; responses are standardized upstream, so
the prior variance is fixed at 1 and a nugget sigma^2 models observation
noise.  Hyperparameters are fitted by multi-start bounded L-BFGS-B on the
negative log marginal likelihood in log-parameter space, with analytic
gradients.  A small diagonal jitter (1e-8, escalated tenfold up to 1e-4 on
factorization failure) keeps the covariance positive definite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import ConfigError, NumericalError

BASE_JITTER = 1e-8
MAX_JITTER = 1e-4
PHI_BOUNDS = (1e-3, 1e3)
SIGMA2_BOUNDS = (1e-8, 10.0)
_LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class GPHyperparams:
    """Per-dimension squared length-scales and the noise variance."""

    phi: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if not (self.phi > 0).all():
            raise ConfigError("length-scales must be positive")
        if self.sigma2 < 0:
            raise ConfigError("noise variance must be nonnegative")


@dataclass
class FitOptions:
    n_starts: int = 5
    seed: int = 0
    phi_bounds: tuple[float, float] = PHI_BOUNDS
    sigma2_bounds: tuple[float, float] = SIGMA2_BOUNDS
    max_iter: int = 200


@dataclass
class GPModel:
    """A fitted GP: hyperparameters, training data, cached factorization."""

    hyperparams: GPHyperparams
    X_train: np.ndarray
    y_train: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    nll: float


@dataclass
class GaussianPredictive:
    """Gaussian predictive mean/variance (arrays for batched queries)."""

    mean: np.ndarray
    variance: np.ndarray


def kernel(x: np.ndarray, x2: np.ndarray, phi: np.ndarray) -> float:
    """Separable Gaussian correlation between two points; 1 iff x == x2."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    return float(np.exp(-np.sum((x - x2) ** 2 / phi)))


def kernel_matrix(X1: np.ndarray, X2: np.ndarray, phi: np.ndarray) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    phi = np.asarray(phi, dtype=float)
    q = np.zeros((X1.shape[0], X2.shape[0]))
    for p in range(X1.shape[1]):
        q += (X1[:, p][:, None] - X2[:, p][None, :]) ** 2 / phi[p]
    return np.exp(-q)


def _sq_dists(X: np.ndarray) -> np.ndarray:
    """Per-dimension squared-distance matrices, shape (d, m, m)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    diff = X[:, None, :] - X[None, :, :]
    return np.moveaxis(diff**2, -1, 0)


def _factor(C: np.ndarray, sigma2: float):
    """Cholesky of C + (sigma2 + jitter) I with jitter escalation."""
    m = C.shape[0]
    jitter = BASE_JITTER
    while jitter <= MAX_JITTER:
        try:
            L = np.linalg.cholesky(C + (sigma2 + jitter) * np.eye(m))
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    return None, jitter


def neg_log_likelihood(h: GPHyperparams, X: np.ndarray, y: np.ndarray) -> float:
    """0.5 log det C_n + 0.5 y^T C_n^{-1} y + (m/2) log 2pi.

    Returns inf when the covariance cannot be factorized even at the
    maximum jitter, so optimizers treat the point as infeasible.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    m = X.shape[0]
    K = kernel_matrix(X, X, h.phi)
    L, _ = _factor(K, h.sigma2)
    if L is None:
        return float("inf")
    half = solve_triangular(L, y, lower=True)
    return float(np.log(np.diag(L)).sum() + 0.5 * half @ half + 0.5 * m * _LOG2PI)


def _nll_and_grad(theta: np.ndarray, D2: np.ndarray, y: np.ndarray):
    """NLL and its gradient in log-parameters (log phi_1..d, log sigma2)."""
    d = D2.shape[0]
    m = y.size
    phi = np.exp(theta[:d])
    sigma2 = np.exp(theta[d])
    K = np.exp(-(D2 / phi[:, None, None]).sum(axis=0))
    L, _ = _factor(K, sigma2)
    if L is None:
        return 1e25, np.zeros_like(theta)
    half = solve_triangular(L, y, lower=True)
    nll = float(np.log(np.diag(L)).sum() + 0.5 * half @ half + 0.5 * m * _LOG2PI)
    alpha = cho_solve((L, True), y)
    Cinv = cho_solve((L, True), np.eye(m))
    M = Cinv - np.outer(alpha, alpha)
    grad = np.empty(d + 1)
    for p in range(d):
        dC = K * (D2[p] / phi[p])
        grad[p] = 0.5 * float((M * dC).sum())
    grad[d] = 0.5 * sigma2 * float(np.trace(M))
    return nll, grad


def _starts(d: int, opts: FitOptions) -> np.ndarray:
    lo = np.array([np.log(opts.phi_bounds[0])] * d + [np.log(opts.sigma2_bounds[0])])
    hi = np.array([np.log(opts.phi_bounds[1])] * d + [np.log(opts.sigma2_bounds[1])])
    first = np.array([np.log(0.1 * d)] * d + [np.log(0.05)])
    first = np.clip(first, lo, hi)
    starts = [first]
    if opts.n_starts > 1:
        sob = qmc.Sobol(d=d + 1, scramble=True, seed=opts.seed)
        u = sob.random(opts.n_starts - 1)
        starts.extend(lo + u * (hi - lo))
    return np.asarray(starts)


def fit(X: np.ndarray, y: np.ndarray, opts: FitOptions | None = None) -> GPModel:
    """Maximum-likelihood hyperparameters via multi-start bounded L-BFGS-B."""
    opts = opts or FitOptions()
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    m, d = X.shape
    if m < 2:
        raise ConfigError(f"need at least 2 training points, got {m}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NumericalError("training data contain non-finite values")

    D2 = _sq_dists(X)
    bounds = [(np.log(opts.phi_bounds[0]), np.log(opts.phi_bounds[1]))] * d + [
        (np.log(opts.sigma2_bounds[0]), np.log(opts.sigma2_bounds[1]))
    ]
    best = None
    for theta0 in _starts(d, opts):
        res = minimize(
            _nll_and_grad,
            theta0,
            args=(D2, y),
            method="L-BFGS-B",
            jac=True,
            bounds=bounds,
            options={"maxiter": opts.max_iter, "ftol": 1e-12, "gtol": 1e-8},
        )
        if np.isfinite(res.fun) and res.fun < 1e24 and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise NumericalError(
            "all optimizer starts failed to factorize the covariance; "
            "training data may contain duplicate rows with pathological scaling"
        )
    phi = np.exp(best.x[:d])
    sigma2 = float(np.exp(best.x[d]))
    h = GPHyperparams(phi=phi, sigma2=sigma2)
    return _finalize(h, X, y)


def _finalize(h: GPHyperparams, X: np.ndarray, y: np.ndarray) -> GPModel:
    m = X.shape[0]
    K = kernel_matrix(X, X, h.phi)
    L, jitter = _factor(K, h.sigma2)
    if L is None:
        raise NumericalError("covariance not positive definite at the fitted hyperparameters")
    alpha = cho_solve((L, True), y)
    half = solve_triangular(L, y, lower=True)
    nll = float(np.log(np.diag(L)).sum() + 0.5 * half @ half + 0.5 * m * _LOG2PI)
    return GPModel(hyperparams=h, X_train=X, y_train=y, chol=L, alpha=alpha, jitter=jitter, nll=nll)


def make_model(h: GPHyperparams, X: np.ndarray, y: np.ndarray) -> GPModel:
    """Build a model with given hyperparameters (no optimization)."""
    return _finalize(h, np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float))


def predict(model: GPModel, x_star: np.ndarray, include_noise: bool = True) -> GaussianPredictive:
    """Gaussian predictive at one point (d,) or a batch (n, d).

    mean = c^T C_n^{-1} y; variance = 1 - c^T C_n^{-1} c (+ sigma2 for the
    noisy-response variance), clamped below at 1e-12.
    """
    x_star = np.asarray(x_star, dtype=float)
    single = x_star.ndim == 1
    Xs = np.atleast_2d(x_star)
    c = kernel_matrix(Xs, model.X_train, model.hyperparams.phi)
    mean = c @ model.alpha
    v = solve_triangular(model.chol, c.T, lower=True)
    var = 1.0 - (v**2).sum(axis=0)
    if include_noise:
        var = var + model.hyperparams.sigma2
    var = np.maximum(var, 1e-12)
    if single:
        return GaussianPredictive(mean=mean[0], variance=var[0])
    return GaussianPredictive(mean=mean, variance=var)


def model_to_dict(model: GPModel) -> dict:
    return {
        "phi": model.hyperparams.phi.tolist(),
        "sigma2": model.hyperparams.sigma2,
        "X_train": model.X_train.tolist(),
        "y_train": model.y_train.tolist(),
    }


def model_from_dict(d: dict) -> GPModel:
    h = GPHyperparams(phi=np.asarray(d["phi"], dtype=float), sigma2=float(d["sigma2"]))
    return make_model(h, np.asarray(d["X_train"], dtype=float), np.asarray(d["y_train"], dtype=float))


def save_model(model: GPModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> GPModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
