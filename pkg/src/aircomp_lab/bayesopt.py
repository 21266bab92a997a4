"""Bayesian optimisation of the weight-truncation bounds.

The objective is the Monte-Carlo MSE of adaptive weighted averaging for
weights and values resampled from empirical pools. A GP surrogate over
``(delta_min, delta_max)`` scores random candidates by expected
improvement; the best evaluated point is returned.

The search runs on the unit square ``0 <= u_min <= u_max <= 1``. In the
default ``"quantile"`` space a coordinate ``u`` maps to the weight-pool
quantile at ``u * upper_quantile``, which keeps the search resolution
matched to where the weights actually lie even for heavy-tailed pools.
The ``"linear"`` space maps ``u`` to ``u * quantile(fw, upper_quantile)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import aircomp
from .aircomp import DegenerateRoundError, TruncationParams
from .channel import SystemConfig, draw_channel_slots
from .gp import GpDataset, GpPosterior, KernelParams, fit_hyperparams, posterior

log = logging.getLogger(__name__)

# Floor for log-transformed MSE values; exact recovery gives 0.
MSE_FLOOR = 1e-300
SURROGATE_INIT = KernelParams(scale=1.0, inv_lengthscale=0.5, noise=0.1)
SEARCH_SPACES = ("quantile", "linear", "log")


@dataclass(frozen=True)
class BoConfig:
    n_init: int = 8
    n_iters: int = 30
    n_candidates: int = 256
    n_mc: int = 500
    upper_quantile: float = 1.0
    fit_budget: int = 100
    space: str = "quantile"

    def __post_init__(self):
        for name in ("n_init", "n_candidates", "n_mc"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_iters < 0:
            raise ValueError("n_iters must be >= 0")
        if not 0 < self.upper_quantile <= 1:
            raise ValueError("upper_quantile must lie in (0, 1]")
        if self.space not in SEARCH_SPACES:
            raise ValueError(f"space must be one of {SEARCH_SPACES}")


@dataclass
class BoState:
    """Evaluated points. ``coords`` are the unit-square search coordinates."""

    thetas: list = field(default_factory=list)
    values: list = field(default_factory=list)
    coords: list = field(default_factory=list)
    t: int = 0

    def append(self, theta: TruncationParams, value: float, coord=None):
        self.thetas.append(theta)
        self.values.append(float(value))
        if coord is None:
            coord = (theta.delta_min, theta.delta_max)
        self.coords.append(tuple(float(c) for c in coord))

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.values))

    @property
    def best(self) -> tuple:
        i = self.best_index
        return self.thetas[i], self.values[i]

    def inputs(self) -> np.ndarray:
        return np.array(self.coords, dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class TraceRecord:
    step: int
    delta_min: float
    delta_max: float
    mse: float
    best_so_far: float
    surrogate_fallback: bool = False


@dataclass
class BoResult:
    theta: TruncationParams
    state: BoState
    trace: list


def estimate_mse(theta: TruncationParams, fs_samples, fw_samples, config: SystemConfig,
                 n_mc: int, rng: np.random.Generator, scalar_weights: bool = False) -> float:
    """Monte-Carlo MSE of adaptive weighted averaging against the exact average.

    Each of ``n_mc`` rounds draws ``M`` node payloads from the pools, draws
    both channel slots and runs the protocol. The random draws do not
    depend on ``theta``, so a fixed ``rng`` seed gives common random
    numbers across candidates.

    One-dimensional pools are resampled element by element (``M`` weights
    only when ``scalar_weights``). A value pool shaped ``(rows, L)`` holds
    whole node payloads; each node then takes one row index for both
    pools, which keeps the joint structure of a node's weights and values.
    The matching weight pool is ``(rows, L)``, or ``(rows,)`` with
    ``scalar_weights``.
    """
    fs = np.asarray(fs_samples, dtype=float)
    fw = np.asarray(fw_samples, dtype=float)
    if fs.size == 0 or fw.size == 0:
        raise ValueError("sample pools must be nonempty")
    m, length = config.num_nodes, config.message_len
    if fs.ndim == 2:
        want = fs.shape[:1] if scalar_weights else fs.shape
        if fw.shape != want or fs.shape[1] != length:
            raise ValueError(f"row pools must be shaped {want} and (rows, {length})")
        rows = rng.integers(0, fs.shape[0], size=(n_mc, m))
        w, s = fw[rows], fs[rows]
    else:
        w = rng.choice(fw.ravel(), size=(n_mc, m) if scalar_weights else (n_mc, m, length))
        s = rng.choice(fs.ravel(), size=(n_mc, m, length))
    slots = draw_channel_slots(config, rng, n_slots=2, size=n_mc)
    exact = aircomp.exact_weighted_average(w, s, scalar_weights)
    try:
        res = aircomp.adaptive_weighted_average(w, s, theta, slots, config, rng, scalar_weights)
    except DegenerateRoundError:
        return float("inf")
    err = (exact - res.estimate) ** 2
    mse = float(np.mean(err))
    return mse if np.isfinite(mse) else float("inf")


def expected_improvement(post: GpPosterior, best_neg: float) -> np.ndarray:
    """Closed-form EI for maximising the negated surrogate mean.

    ``post`` models the objective being minimised; ``best_neg`` is the
    largest negated objective observed so far.
    """
    mu = np.asarray(post.mean, dtype=float)
    sigma = np.sqrt(np.maximum(np.asarray(post.variance, dtype=float), 0.0))
    imp = -mu - best_neg
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = imp * stats.norm.cdf(z) + sigma * stats.norm.pdf(z)
    return np.where(sigma > 0, ei, np.maximum(imp, 0.0))


def sample_candidates(n: int, upper: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws in ``0 <= delta_min <= delta_max <= upper`` via order statistics."""
    u = rng.uniform(0.0, upper, size=(n, 2))
    return np.sort(u, axis=1)


def _surrogate_targets(values):
    y = np.log(np.maximum(np.asarray(values, dtype=float), MSE_FLOOR))
    finite = np.isfinite(y)
    if not finite.all():
        cap = y[finite].max() + 10.0 if finite.any() else 0.0
        y = np.where(finite, y, cap)
    return y


def _standardize(x, ref):
    mu = ref.mean(axis=0)
    sd = ref.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (x - mu) / sd


def score_candidates(state: BoState, candidates: np.ndarray, fit_budget: int = 100):
    """Surrogate posterior and EI at ``candidates``.

    The surrogate models the log MSE on standardised inputs and outputs.
    Returns ``(ei, posterior, fallback)`` where ``fallback`` signals that
    the hyperparameter fit failed and the prior was used instead.
    """
    x = state.inputs()
    y = _surrogate_targets(state.values)
    sd = y.std()
    y_std = (y - y.mean()) / (sd if sd > 0 else 1.0)
    data = GpDataset(_standardize(x, x), y_std)
    test = _standardize(candidates, x)
    try:
        params = fit_hyperparams(data, SURROGATE_INIT, fit_budget)
        post = posterior(data, params, test)
        fallback = False
    except (np.linalg.LinAlgError, ValueError) as exc:
        log.warning("surrogate fit failed (%s); using prior-only EI", exc)
        p = SURROGATE_INIT
        post = GpPosterior(np.full(len(candidates), data.prior_mean),
                           np.full(len(candidates), p.scale + p.noise))
        fallback = True
    best_neg = float(np.max(-y_std))
    return expected_improvement(post, best_neg), post, fallback


def search_decoder(fw_samples, config: BoConfig):
    """Map unit-square coordinates ``(..., 2)`` to truncation bounds.

    Both maps are nondecreasing, so sorted coordinates give
    ``delta_min <= delta_max``.
    """
    fw = np.asarray(fw_samples, dtype=float).ravel()
    q = config.upper_quantile
    if config.space == "linear":
        upper = float(np.quantile(fw, q))
        return lambda u: np.asarray(u, dtype=float) * upper
    if config.space == "log":
        upper = float(np.quantile(fw, q))
        positive = fw[fw > 0]
        lower = float(positive.min()) if positive.size else upper
        if not upper > 0:
            raise ValueError("log search space needs a positive weight")
        return lambda u: lower * (upper / lower) ** np.asarray(u, dtype=float)
    fw = np.sort(fw)
    return lambda u: np.quantile(fw, np.asarray(u, dtype=float) * q)


def _to_theta(decoded) -> TruncationParams:
    lo, hi = float(decoded[0]), float(decoded[1])
    return TruncationParams(min(lo, hi), hi)


def bo_step(state: BoState, objective, config: BoConfig, rng: np.random.Generator,
            decode=None):
    """One acquisition step: fit, score candidates, evaluate the EI maximiser.

    ``objective`` maps a :class:`TruncationParams` to its MSE estimate and
    ``decode`` maps unit-square coordinates to bounds (identity when
    omitted). Returns ``(theta, state, fallback)``; ``state`` is updated
    in place.
    """
    decode = decode or (lambda u: np.asarray(u, dtype=float))
    cand = sample_candidates(config.n_candidates, 1.0, rng)
    ei, _, fallback = score_candidates(state, cand, config.fit_budget)
    i = int(np.argmax(ei))
    theta = _to_theta(decode(cand[i]))
    state.append(theta, objective(theta), cand[i])
    state.t += 1
    return theta, state, fallback


def optimize_truncation(bo_config: BoConfig, fs_samples, fw_samples, config: SystemConfig,
                        rng: np.random.Generator, scalar_weights: bool = False) -> BoResult:
    """Full optimisation run: random initial design, then EI-driven steps.

    All objective evaluations of a run share one random stream seed.
    The returned ``theta`` is the evaluated point with the smallest
    observed MSE.
    """
    fw = np.asarray(fw_samples, dtype=float)
    if fw.size == 0 or np.asarray(fs_samples).size == 0:
        raise ValueError("sample pools must be nonempty")
    decode = search_decoder(fw, bo_config)
    crn_seed = int(rng.integers(2**63))

    def objective(theta):
        return estimate_mse(theta, fs_samples, fw, config, bo_config.n_mc,
                            np.random.default_rng(crn_seed), scalar_weights)

    state = BoState()
    trace = []
    best = np.inf
    for coord in sample_candidates(bo_config.n_init, 1.0, rng):
        theta = _to_theta(decode(coord))
        value = objective(theta)
        state.append(theta, value, coord)
        best = min(best, value)
        trace.append(TraceRecord(0, theta.delta_min, theta.delta_max, value, best))
    for _ in range(bo_config.n_iters):
        theta, state, fallback = bo_step(state, objective, bo_config, rng, decode)
        best = min(best, state.values[-1])
        trace.append(TraceRecord(state.t, theta.delta_min, theta.delta_max,
                                 state.values[-1], best, fallback))
    return BoResult(theta=state.best[0], state=state, trace=trace)
