"""Gaussian-process regression with a squared-exponential kernel.

The kernel is ``k(a, b) = scale * exp(-inv_lengthscale * |a - b|^2)`` plus
``noise`` on the diagonal of any matrix built from a point set with
itself. The prior mean is the constant empirical mean of the outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

LOG_2PI = np.log(2.0 * np.pi)
JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class GpDataset:
    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.outputs, dtype=float).ravel()
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} inputs but {y.shape[0]} outputs")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("dataset contains non-finite values")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)

    def __len__(self):
        return self.outputs.shape[0]

    @property
    def prior_mean(self) -> float:
        return float(np.mean(self.outputs))


@dataclass(frozen=True)
class KernelParams:
    scale: float
    inv_lengthscale: float
    noise: float

    def __post_init__(self):
        if not (self.scale > 0 and self.inv_lengthscale > 0 and self.noise > 0):
            raise ValueError(f"kernel parameters must be positive: {self}")

    @property
    def log(self) -> np.ndarray:
        return np.log([self.scale, self.inv_lengthscale, self.noise])

    @classmethod
    def from_log(cls, theta) -> "KernelParams":
        a, b, c = np.exp(np.asarray(theta, dtype=float))
        return cls(float(a), float(b), float(c))


@dataclass(frozen=True)
class GpPosterior:
    mean: np.ndarray
    variance: np.ndarray
    n_clipped: int = 0


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def sq_dist(a, b) -> np.ndarray:
    a, b = _as_points(a), _as_points(b)
    d2 = np.sum(a**2, 1)[:, None] + np.sum(b**2, 1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d2, 0.0)


def kernel_eval(params: KernelParams, a, b, same_point: bool) -> float:
    d2 = float(np.sum((np.atleast_1d(np.asarray(a, float)) - np.atleast_1d(np.asarray(b, float))) ** 2))
    return params.scale * np.exp(-params.inv_lengthscale * d2) + (params.noise if same_point else 0.0)


def cross_kernel(params: KernelParams, a, b) -> np.ndarray:
    """Kernel between two point sets, without the noise term."""
    return params.scale * np.exp(-params.inv_lengthscale * sq_dist(a, b))


def kernel_matrix(params: KernelParams, x) -> np.ndarray:
    """Training covariance ``K`` including ``noise`` on the diagonal."""
    k = cross_kernel(params, x, x)
    k[np.diag_indices_from(k)] += params.noise
    return k


def cholesky(k: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, escalating diagonal jitter up to 1e-6."""
    eye = np.eye(k.shape[0])
    for jitter in JITTER_LADDER:
        try:
            return linalg.cholesky(k + jitter * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError("kernel matrix not PD")


def _factorize(dataset, params):
    k = kernel_matrix(params, dataset.inputs)
    chol = cholesky(k)
    resid = dataset.outputs - dataset.prior_mean
    alpha = linalg.cho_solve((chol, True), resid, check_finite=False)
    return k, chol, resid, alpha


def log_marginal_likelihood(dataset: GpDataset, params: KernelParams, return_grad: bool = False):
    """Log evidence of the centred outputs.

    With ``return_grad`` the gradient with respect to the log-parameters
    ``(log scale, log inv_lengthscale, log noise)`` is returned as well.
    """
    n = len(dataset)
    _, chol, resid, alpha = _factorize(dataset, params)
    lml = -np.sum(np.log(np.diag(chol))) - 0.5 * n * LOG_2PI - 0.5 * resid @ alpha
    if not return_grad:
        return float(lml)
    k_inv = linalg.cho_solve((chol, True), np.eye(n), check_finite=False)
    inner = np.outer(alpha, alpha) - k_inv
    d2 = sq_dist(dataset.inputs, dataset.inputs)
    k_se = params.scale * np.exp(-params.inv_lengthscale * d2)
    dk = (k_se, -params.inv_lengthscale * d2 * k_se, params.noise * np.eye(n))
    grad = np.array([0.5 * np.sum(inner * d) for d in dk])
    return float(lml), grad


DEFAULT_LOG_BOUNDS = ((np.log(1e-6), np.log(1e6)),) * 3


def fit_hyperparams(dataset: GpDataset, init: KernelParams, budget: int = 100,
                    bounds=DEFAULT_LOG_BOUNDS, gtol: float = 1e-6) -> KernelParams:
    """Maximise the log marginal likelihood from a single starting point.

    L-BFGS-B on the log-parameters. The result never scores below
    ``init``; ``budget=0`` returns ``init`` unchanged.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    try:
        start = log_marginal_likelihood(dataset, init)
    except NotPositiveDefiniteError:
        start = -np.inf
    if not np.isfinite(start):
        raise ValueError("bad initialization")
    if budget <= 0:
        return init

    def objective(theta):
        try:
            lml, grad = log_marginal_likelihood(dataset, KernelParams.from_log(theta), True)
        except NotPositiveDefiniteError:
            return 1e300, np.zeros(3)
        return -lml, -grad

    x0 = np.clip(init.log, [b[0] for b in bounds], [b[1] for b in bounds])
    res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxiter": int(budget), "gtol": gtol})
    fitted = KernelParams.from_log(res.x)
    try:
        end = log_marginal_likelihood(dataset, fitted)
    except NotPositiveDefiniteError:
        return init
    return fitted if end >= start else init


def posterior(dataset: GpDataset, params: KernelParams, test_inputs) -> GpPosterior:
    """Predictive mean and variance at ``test_inputs``.

    The variance includes the ``noise`` term, so far from the data it
    reverts to ``scale + noise``.
    """
    test = _as_points(test_inputs)
    _, chol, _, alpha = _factorize(dataset, params)
    k_star = cross_kernel(params, dataset.inputs, test)
    mean = dataset.prior_mean + k_star.T @ alpha
    v = linalg.solve_triangular(chol, k_star, lower=True, check_finite=False)
    var = params.scale + params.noise - np.sum(v**2, axis=0)
    negative = var < 0
    return GpPosterior(mean=mean, variance=np.where(negative, 0.0, var), n_clipped=int(negative.sum()))
