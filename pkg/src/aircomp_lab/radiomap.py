"""One-dimensional radio-map scenarios.

Received power follows log-distance path loss plus log-normal shadowing
whose correlation decays exponentially and halves at ``d_cor``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

LN2 = np.log(2.0)


@dataclass(frozen=True)
class ScenarioParams:
    x_tx: float = -1.0
    p_tx: float = 10.0
    eta: float = 3.0
    sigma_db: float = 8.0
    d_cor: float = 100.0
    area: tuple = (1.0, 500.0)
    n_measurements: int = 128
    n_test: int = 10
    meas_noise_var: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "area", tuple(float(a) for a in self.area))
        lo, hi = self.area
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if self.sigma_db < 0:
            raise ValueError("sigma_db must be >= 0")
        if not self.d_cor > 0:
            raise ValueError("d_cor must be > 0")
        if not lo < hi:
            raise ValueError("area must satisfy lo < hi")
        if self.n_measurements < 1 or self.n_test < 1:
            raise ValueError("need at least one measurement and one test point")
        if self.meas_noise_var < 0:
            raise ValueError("meas_noise_var must be >= 0")
        if lo <= self.x_tx <= hi:
            raise ValueError("transmitter must lie outside the area")

    def mismatched(self, eps_d: float = 0.0, eps_sigma: float = 0.0) -> "ScenarioParams":
        """Copy with corrupted shadowing statistics ``d_cor + eps_d``, ``sigma_db + eps_sigma``."""
        return replace(self, d_cor=self.d_cor + eps_d, sigma_db=self.sigma_db + eps_sigma)


@dataclass(frozen=True)
class RadioMapScenario:
    params: ScenarioParams
    meas_locations: np.ndarray
    test_locations: np.ndarray
    true_meas: np.ndarray
    true_test: np.ndarray
    observed_meas: np.ndarray


def path_loss_estimate(x, params: ScenarioParams):
    """Mean received power ``P_tx - 10 eta log10 |x_tx - x|`` in dBm."""
    dist = np.abs(params.x_tx - np.asarray(x, dtype=float))
    if np.any(dist == 0):
        raise ValueError("singular distance: location coincides with the transmitter")
    return params.p_tx - 10.0 * params.eta * np.log10(dist)


def shadowing_covariance(locations, sigma_db: float, d_cor: float) -> np.ndarray:
    """``sigma_db^2 * exp(-|x_i - x_j| ln2 / d_cor)``."""
    x = np.asarray(locations, dtype=float)
    dist = np.abs(x[:, None] - x[None, :])
    return sigma_db**2 * np.exp(-dist / d_cor * LN2)


def _cholesky_jittered(cov, max_jitter=1e-8):
    eye = np.eye(cov.shape[0])
    for jitter in (0.0, 1e-12, 1e-10, max_jitter):
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("shadowing covariance factorization failed")


def grid_locations(params: ScenarioParams) -> np.ndarray:
    lo, hi = params.area
    return np.linspace(lo, hi, params.n_test)


def generate_scenario(params: ScenarioParams, rng: np.random.Generator) -> RadioMapScenario:
    """Draw measurement locations, a joint shadowing field and noisy observations.

    Measurement locations are uniform over the area; test locations are a
    fixed uniform grid. Shadowing is drawn jointly over both sets so the
    ground truth at test points is consistent with the observations.
    """
    lo, hi = params.area
    meas = rng.uniform(lo, hi, params.n_measurements)
    test = grid_locations(params)
    locs = np.concatenate([meas, test])
    if params.sigma_db > 0:
        chol = _cholesky_jittered(shadowing_covariance(locs, params.sigma_db, params.d_cor))
        chi = chol @ rng.standard_normal(locs.size)
    else:
        rng.standard_normal(locs.size)
        chi = np.zeros(locs.size)
    p_rx = path_loss_estimate(locs, params) + chi
    n = params.n_measurements
    noise = rng.standard_normal(n) * np.sqrt(params.meas_noise_var)
    return RadioMapScenario(
        params=params,
        meas_locations=meas,
        test_locations=test,
        true_meas=p_rx[:n],
        true_test=p_rx[n:],
        observed_meas=p_rx[:n] + noise,
    )
