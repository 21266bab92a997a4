"""AirComp summation and the weighted-averaging protocols built on it.

Every function accepts optional leading batch axes: messages are shaped
``(..., M, L)`` and channel arrays ``(..., M)``. A single round is the
unbatched case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, SystemConfig


class DegenerateRoundError(ValueError):
    """Every node holds an all-zero message, so ``rho`` is undefined."""


class SingularChannelError(ZeroDivisionError):
    """Channel inversion was requested for ``h = 0``."""


@dataclass(frozen=True)
class TruncationParams:
    delta_min: float = 0.0
    delta_max: float = float("inf")

    def __post_init__(self):
        if not (0 <= self.delta_min <= self.delta_max):
            raise ValueError(
                f"need 0 <= delta_min <= delta_max, got ({self.delta_min}, {self.delta_max})"
            )

    @property
    def ratio(self) -> float:
        return self.delta_min / self.delta_max if self.delta_max > 0 else 1.0


IDENTITY_TRUNCATION = TruncationParams(0.0, float("inf"))


@dataclass(frozen=True)
class AirCompResult:
    r_hat: np.ndarray
    rho: np.ndarray


@dataclass(frozen=True)
class AveragingResult:
    """Outcome of one averaging protocol run.

    ``denominator`` is the received sum of weights (the constant ``M`` for
    simple averaging). ``diverged`` marks elements whose denominator did
    not stay positive or whose estimate is not finite.
    """

    estimate: np.ndarray
    numerator: np.ndarray
    denominator: np.ndarray
    rho: tuple

    @property
    def diverged(self) -> np.ndarray:
        return ~np.isfinite(self.estimate) | (np.asarray(self.denominator) <= 0)


def power_control_rho(norms, channel: ChannelRealization, p_max: float) -> np.ndarray:
    """Common power-scaling factor ``rho``.

    ``sqrt(rho) = min_i sqrt(gamma_bar_i) |h_i| sqrt(P_max) / ||m_i||`` over
    nodes with a nonzero message, so the binding node transmits at exactly
    ``P_max``.
    """
    norms = np.asarray(norms, dtype=float)
    amp = channel.effective_amplitude * np.sqrt(p_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(norms > 0, amp / np.where(norms > 0, norms, 1.0), np.inf)
    sqrt_rho = np.min(ratio, axis=-1)
    if np.any(~np.isfinite(sqrt_rho)):
        raise DegenerateRoundError("degenerate all-zero round")
    return sqrt_rho**2


def encode(m, rho, gamma_bar_i, h_i) -> np.ndarray:
    """Channel-inverting pre-scaling ``x = sqrt(rho) / (sqrt(gamma_bar) h) * m``.

    ``m`` is ``(..., L)``; ``rho``, ``gamma_bar_i`` and ``h_i`` broadcast
    against its leading axes.
    """
    h_i = np.asarray(h_i)
    if np.any(h_i == 0):
        raise SingularChannelError("singular channel")
    scale = np.sqrt(rho) / (np.sqrt(gamma_bar_i) * h_i)
    return np.asarray(scale)[..., None] * np.asarray(m, dtype=float)


def _complex_noise(shape, noise_floor, rng):
    # CN(0, sigma^2): each quadrature carries half the power
    parts = rng.standard_normal(tuple(shape) + (2,)) * np.sqrt(noise_floor / 2.0)
    return parts[..., 0] + 1j * parts[..., 1]


def transmit_sum(messages, channel: ChannelRealization, config: SystemConfig,
                 rng: np.random.Generator) -> AirCompResult:
    """One AirComp slot: all nodes transmit, the receiver decodes the sum.

    Simulates ``y = sum_i sqrt(gamma_bar_i) h_i x_i + z`` and returns
    ``Re(y / sqrt(rho))``. The per-element decoding error is Gaussian with
    variance ``sigma_z^2 / (2 rho)``.
    """
    m = np.asarray(messages, dtype=float)
    rho = power_control_rho(np.linalg.norm(m, axis=-1), channel, config.p_max)
    x = encode(m, rho[..., None], channel.gamma_bar, channel.h)
    gain = (np.sqrt(channel.gamma_bar) * channel.h)[..., None]
    z = _complex_noise(m.shape[:-2] + m.shape[-1:], config.noise_floor, rng)
    y = np.sum(gain * x, axis=-2) + z
    r_hat = np.real(y / np.sqrt(rho)[..., None])
    return AirCompResult(r_hat=r_hat, rho=rho)


def transmit_power(messages, channel: ChannelRealization, p_max: float) -> np.ndarray:
    """Per-node transmit energy ``||x_i||^2`` under the power-control rule."""
    m = np.asarray(messages, dtype=float)
    rho = power_control_rho(np.linalg.norm(m, axis=-1), channel, p_max)
    x = encode(m, rho[..., None], channel.gamma_bar, channel.h)
    return np.sum(np.abs(x) ** 2, axis=-1)


def truncate_weight(w, params: TruncationParams):
    """Clamp weights into ``[delta_min, delta_max]``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    return np.maximum(np.minimum(w, params.delta_max), params.delta_min)


def _weighted_average(weights, values, slots, config, rng, scalar_weights):
    w = np.asarray(weights, dtype=float)
    s = np.asarray(values, dtype=float)
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    ch0, ch1 = slots
    if scalar_weights:
        # one weight per node: slot 1 carries a single scalar each
        m0 = w[..., None] * s
        m1 = w[..., None]
    else:
        m0 = w * s
        m1 = w
    num = transmit_sum(m0, ch0, config, rng)
    den = transmit_sum(m1, ch1, config, rng)
    with np.errstate(divide="ignore", invalid="ignore"):
        estimate = num.r_hat / den.r_hat
    return AveragingResult(
        estimate=estimate, numerator=num.r_hat, denominator=den.r_hat, rho=(num.rho, den.rho)
    )


def pure_weighted_average(weights, values, slots, config: SystemConfig,
                          rng: np.random.Generator, scalar_weights: bool = False) -> AveragingResult:
    """Two-slot weighted averaging: weighted sum over sum of weights.

    No guard is placed on the received denominator; a sign flip or a
    near-zero value is reported through :attr:`AveragingResult.diverged`.

    With ``scalar_weights`` the weights are shaped ``(..., M)`` and each
    node sends one scalar in the second slot.
    """
    return _weighted_average(weights, values, slots, config, rng, scalar_weights)


def adaptive_weighted_average(weights, values, params: TruncationParams, slots,
                              config: SystemConfig, rng: np.random.Generator,
                              scalar_weights: bool = False) -> AveragingResult:
    """Weighted averaging with weights clamped by :func:`truncate_weight` in both slots."""
    g = truncate_weight(weights, params)
    return _weighted_average(g, values, slots, config, rng, scalar_weights)


def simple_average(values, slot: ChannelRealization, config: SystemConfig,
                   rng: np.random.Generator) -> AveragingResult:
    """Single-slot unweighted average: AirComp sum of ``s_i`` divided by ``M``."""
    s = np.asarray(values, dtype=float)
    res = transmit_sum(s, slot, config, rng)
    n_nodes = s.shape[-2]
    return AveragingResult(
        estimate=res.r_hat / n_nodes,
        numerator=res.r_hat,
        denominator=np.full(res.r_hat.shape, float(n_nodes)),
        rho=(res.rho,),
    )


def exact_weighted_average(weights, values, scalar_weights: bool = False):
    """Noise-free weighted average, the reference the protocols approximate."""
    w = np.asarray(weights, dtype=float)
    s = np.asarray(values, dtype=float)
    if scalar_weights:
        w = w[..., None]
    return np.sum(w * s, axis=-2) / np.sum(w, axis=-2)


# Slot accounting for a weighted average of length-1 messages.
_SLOTS = {"pure": 2, "adaptive": 2, "simple": 1}


def required_slots(method: str, num_nodes: int) -> int:
    """Uplink time slots per averaging round.

    AirComp protocols cost one slot per summation regardless of ``M``;
    collecting both messages digitally costs ``2M`` orthogonal slots.
    Norm reporting and ``rho`` broadcast are not counted.
    """
    if method == "digital":
        return 2 * num_nodes
    try:
        return _SLOTS[method]
    except KeyError:
        raise ValueError(f"no slot accounting for method {method!r}") from None
