"""Distributed GP regression by product of experts, fused over the air.

Each node fits a GP to its share of the measurements and predicts at the
common test locations. Fusing the experts is a weighted average with
weights ``1 / sigma_i^2`` and values ``mu_i``, which is what the AirComp
protocols compute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aircomp
from .aircomp import AveragingResult, TruncationParams
from .channel import SystemConfig, draw_channel_slots
from .gp import GpDataset, KernelParams, fit_hyperparams, posterior
from .radiomap import (
    LN2,
    RadioMapScenario,
    ScenarioParams,
    generate_scenario,
    path_loss_estimate,
)

METHODS = ("noiseless", "pure", "simple", "adaptive", "pathloss")
MIN_KERNEL_SCALE = 1e-12


@dataclass(frozen=True)
class ExpertSettings:
    """How local experts are configured.

    The kernel starts from the known shadowing statistics
    (:func:`expert_kernel`) with noise ``meas_noise_var + nugget``. With
    ``fit_budget > 0`` each expert then refines that kernel by maximising
    its own marginal likelihood; ``fit_budget=0`` keeps the
    statistics-derived kernel as is. The squared-exponential kernel cannot
    represent the roughness of an exponentially correlated field, and the
    local fit lets each expert settle on its own trade-off between
    lengthscale and noise, which also sets the spread of its precisions.

    With ``detrend`` the experts regress the residual about the known
    path-loss mean and add that mean back to their predictions; a
    constant prior mean cannot follow the steep decay near the
    transmitter.
    """

    nugget: float = 1.0
    detrend: bool = True
    fit_budget: int = 50


DEFAULT_EXPERTS = ExpertSettings()


@dataclass(frozen=True)
class ExpertPredictions:
    """Per-node predictions at the test locations, shaped ``(M, L)``."""

    means: np.ndarray
    variances: np.ndarray


@dataclass(frozen=True)
class PoeFusion:
    mean: np.ndarray
    variance: np.ndarray

    @property
    def diverged(self) -> np.ndarray:
        return ~np.isfinite(self.mean) | ~(self.variance > 0)


def expert_kernel(sigma_db: float, d_cor: float, noise_var: float) -> KernelParams:
    """Kernel matched to the shadowing statistics.

    The squared-exponential term equals the shadowing variance at zero
    separation and halves at ``d_cor``, like the true correlation. A
    zero shadowing deviation keeps a tiny positive scale so the kernel
    stays valid.
    """
    return KernelParams(scale=max(sigma_db**2, MIN_KERNEL_SCALE), inv_lengthscale=LN2 / d_cor**2,
                        noise=noise_var)


def split_dataset(full: GpDataset, num_nodes: int, rng: np.random.Generator) -> list[GpDataset]:
    """Random partition into ``num_nodes`` disjoint shares of near-equal size."""
    n = len(full)
    if n < num_nodes:
        raise ValueError(f"too few samples: {n} < {num_nodes} nodes")
    perm = rng.permutation(n)
    return [GpDataset(full.inputs[idx], full.outputs[idx]) for idx in np.array_split(perm, num_nodes)]


def local_predict(dataset: GpDataset, params: KernelParams, test_inputs):
    post = posterior(dataset, params, test_inputs)
    return post.mean, post.variance


def predict_experts(scenario: RadioMapScenario, num_nodes: int, rng: np.random.Generator,
                    stats: ScenarioParams | None = None,
                    settings: ExpertSettings = DEFAULT_EXPERTS) -> ExpertPredictions:
    """Split the measurements across nodes and run every local expert.

    ``stats`` supplies the shadowing statistics used to configure the
    kernel (defaults to the scenario's own parameters).
    """
    params = scenario.params
    stats = stats or params
    kernel = expert_kernel(stats.sigma_db, stats.d_cor, stats.meas_noise_var + settings.nugget)
    y = scenario.observed_meas
    trend_test = np.zeros(scenario.test_locations.size)
    if settings.detrend:
        y = y - path_loss_estimate(scenario.meas_locations, params)
        trend_test = path_loss_estimate(scenario.test_locations, params)
    shares = split_dataset(GpDataset(scenario.meas_locations, y), num_nodes, rng)
    means, variances = [], []
    for share in shares:
        k = fit_hyperparams(share, kernel, settings.fit_budget) if settings.fit_budget else kernel
        mu, var = local_predict(share, k, scenario.test_locations)
        means.append(mu + trend_test)
        variances.append(var)
    return ExpertPredictions(np.array(means), np.array(variances))


def poe_fuse(means, inv_variances) -> PoeFusion:
    """Product-of-experts fusion along the node axis (``-2``).

    Precisions add; the fused mean is the precision-weighted mean.
    """
    means = np.asarray(means, dtype=float)
    prec = np.asarray(inv_variances, dtype=float)
    total = np.sum(prec, axis=-2)
    with np.errstate(divide="ignore", invalid="ignore"):
        variance = 1.0 / total
        mean = variance * np.sum(prec * means, axis=-2)
    return PoeFusion(mean=mean, variance=variance)


def build_payloads(predictions: ExpertPredictions):
    """AirComp payloads: weights ``1 / sigma_i^2`` and values ``mu_i``."""
    return 1.0 / predictions.variances, predictions.means


def pseudo_distributions(scenario_params: ScenarioParams, num_nodes: int, n_reps: int,
                         rng: np.random.Generator,
                         settings: ExpertSettings = DEFAULT_EXPERTS):
    """Empirical weight and value pools from offline D-GPR emulation.

    Each repetition draws a pseudo scenario from ``scenario_params``
    (which may carry mismatched statistics), runs the local experts
    configured from the same statistics and collects every payload.
    Pools are shaped ``(n_reps * M, L)``, one row per node payload, so
    they hold ``n_reps * M * L`` samples; ``ravel`` them for
    element-wise resampling.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    pool_w, pool_s = [], []
    for _ in range(n_reps):
        scen = generate_scenario(scenario_params, rng)
        w, s = build_payloads(predict_experts(scen, num_nodes, rng, settings=settings))
        pool_w.append(w)
        pool_s.append(s)
    return np.concatenate(pool_w), np.concatenate(pool_s)


def fuse_predictions(predictions: ExpertPredictions, method: str, config: SystemConfig,
                     rng: np.random.Generator, theta: TruncationParams | None = None,
                     scenario: RadioMapScenario | None = None) -> AveragingResult:
    """Combine expert predictions with one of the comparison methods."""
    if method == "pathloss":
        if scenario is None:
            raise ValueError("pathloss needs the scenario")
        est = path_loss_estimate(scenario.test_locations, scenario.params)
        return AveragingResult(est, est, np.ones_like(est), ())
    w, s = build_payloads(predictions)
    if method == "noiseless":
        fused = poe_fuse(s, w)
        return AveragingResult(fused.mean, fused.mean / fused.variance, 1.0 / fused.variance, ())
    if method == "simple":
        (slot,) = draw_channel_slots(config, rng, n_slots=1)
        return aircomp.simple_average(s, slot, config, rng)
    slots = draw_channel_slots(config, rng, n_slots=2)
    if method == "pure":
        return aircomp.pure_weighted_average(w, s, slots, config, rng)
    if method == "adaptive":
        if theta is None:
            raise ValueError("adaptive method needs truncation parameters")
        return aircomp.adaptive_weighted_average(w, s, theta, slots, config, rng)
    raise ValueError(f"unknown method {method!r}")


def dgpr_estimate(scenario: RadioMapScenario, method: str, config: SystemConfig,
                  rng: np.random.Generator, theta: TruncationParams | None = None,
                  settings: ExpertSettings = DEFAULT_EXPERTS) -> AveragingResult:
    """End-to-end estimate of the received power at the scenario's test points."""
    if method == "pathloss":
        return fuse_predictions(None, method, config, rng, scenario=scenario)
    preds = predict_experts(scenario, config.num_nodes, rng, settings=settings)
    return fuse_predictions(preds, method, config, rng, theta=theta, scenario=scenario)
