"""Channel model and unit conversions for the AirComp uplink.

All arithmetic is done in linear milliwatts; decibel quantities are
converted once when a :class:`SystemConfig` is built.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np


class ChannelKind(str, Enum):
    AWGN = "awgn"
    RAYLEIGH = "rayleigh"


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def linear_to_db(x):
    return 10.0 * np.log10(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SystemConfig:
    """Static description of the uplink.

    Parameters
    ----------
    num_nodes : int
        Number of transmitting nodes ``M``.
    message_len : int
        Message length ``L``.
    p_max : float
        Per-node transmit power budget in mW.
    noise_floor : float
        Receiver noise power ``sigma_z^2`` in mW.
    channel_kind : ChannelKind
        Small-scale fading model.
    avg_gain_db : tuple of float
        Per-node average channel gain ``10 log10(gamma_bar_i)``.
    gain_spread_sigma_db : float
        Std of the per-node log-normal gain spread. Only used by callers
        that redraw gains with :func:`draw_unequal_gains`.
    """

    num_nodes: int
    message_len: int
    p_max: float
    noise_floor: float
    channel_kind: ChannelKind = ChannelKind.AWGN
    avg_gain_db: tuple = ()
    gain_spread_sigma_db: float = 0.0

    def __post_init__(self):
        if not self.avg_gain_db:
            object.__setattr__(self, "avg_gain_db", (0.0,) * int(self.num_nodes))
        object.__setattr__(self, "avg_gain_db", tuple(float(g) for g in self.avg_gain_db))
        object.__setattr__(self, "channel_kind", ChannelKind(self.channel_kind))
        if self.num_nodes < 1:
            raise ValueError("num_nodes must be >= 1")
        if self.message_len < 1:
            raise ValueError("message_len must be >= 1")
        if not self.p_max > 0:
            raise ValueError("p_max must be > 0")
        if self.noise_floor < 0:
            raise ValueError("noise_floor must be >= 0")
        if len(self.avg_gain_db) != self.num_nodes:
            raise ValueError(
                f"avg_gain_db has {len(self.avg_gain_db)} entries, expected {self.num_nodes}"
            )
        if self.gain_spread_sigma_db < 0:
            raise ValueError("gain_spread_sigma_db must be >= 0")

    @classmethod
    def from_db(cls, num_nodes, message_len, p_max_dbm, noise_dbm, avg_gain_db=0.0,
                channel_kind=ChannelKind.AWGN, gain_spread_sigma_db=0.0):
        """Build a config from dBm/dB quantities. A scalar gain is broadcast."""
        gains = np.broadcast_to(np.asarray(avg_gain_db, dtype=float), (num_nodes,))
        return cls(
            num_nodes=num_nodes,
            message_len=message_len,
            p_max=float(db_to_linear(p_max_dbm)),
            noise_floor=float(db_to_linear(noise_dbm)) if np.isfinite(noise_dbm) else 0.0,
            channel_kind=channel_kind,
            avg_gain_db=tuple(gains),
            gain_spread_sigma_db=gain_spread_sigma_db,
        )

    @property
    def gamma_bar(self) -> np.ndarray:
        return db_to_linear(self.avg_gain_db)

    def with_gains(self, avg_gain_db) -> "SystemConfig":
        return replace(self, avg_gain_db=tuple(np.asarray(avg_gain_db, dtype=float)))

    def with_noiseless(self) -> "SystemConfig":
        return replace(self, noise_floor=0.0)


@dataclass(frozen=True)
class RadioSystem:
    """Uplink settings in dBm/dB, as written in configuration files.

    :meth:`build` converts them once into a linear :class:`SystemConfig`.
    """

    num_nodes: int = 8
    p_max_dbm: float = 10.0
    noise_dbm: float = -90.0
    gain_db: float = -70.0
    channel: str = "awgn"
    gain_spread_sigma_db: float = 0.0

    def __post_init__(self):
        ChannelKind(self.channel)

    @property
    def psnr_db(self) -> float:
        return self.p_max_dbm + self.gain_db - self.noise_dbm

    def build(self, message_len: int, num_nodes: int | None = None) -> SystemConfig:
        return SystemConfig.from_db(
            self.num_nodes if num_nodes is None else num_nodes, message_len,
            self.p_max_dbm, self.noise_dbm, self.gain_db,
            ChannelKind(self.channel), self.gain_spread_sigma_db,
        )


@dataclass(frozen=True)
class ChannelRealization:
    """Complex fading gains ``h`` and linear average gains ``gamma_bar``.

    Both arrays carry the node axis last, so a batch of realizations has
    shape ``(..., M)``.
    """

    h: np.ndarray
    gamma_bar: np.ndarray

    @property
    def effective_amplitude(self) -> np.ndarray:
        """``sqrt(gamma_bar) * |h|``, the quantity power control ranks on."""
        return np.sqrt(self.gamma_bar) * np.abs(self.h)


def draw_channel(config: SystemConfig, rng: np.random.Generator, size=None) -> ChannelRealization:
    """Draw one (or ``size``) channel realization(s).

    AWGN fixes ``h = 1``. Rayleigh draws ``h ~ CN(0, 1)`` with variance
    1/2 on each of the real and imaginary parts.
    """
    batch = () if size is None else tuple(np.atleast_1d(size))
    shape = batch + (config.num_nodes,)
    gamma_bar = np.broadcast_to(config.gamma_bar, shape).copy()
    if config.channel_kind is ChannelKind.AWGN:
        h = np.ones(shape, dtype=complex)
    else:
        parts = rng.standard_normal(shape + (2,)) * np.sqrt(0.5)
        h = parts[..., 0] + 1j * parts[..., 1]
    return ChannelRealization(h=h, gamma_bar=gamma_bar)


def psnr_db(config: SystemConfig) -> float:
    """Peak SNR ``10 log10(P_max * gamma_bar / sigma_z^2)`` for equal gains."""
    gains = np.asarray(config.avg_gain_db)
    if not np.all(gains == gains[0]):
        raise ValueError("psnr undefined for unequal gains")
    if config.noise_floor == 0:
        return float("inf")
    return float(linear_to_db(config.p_max * db_to_linear(gains[0]) / config.noise_floor))


def gain_db_for_psnr(psnr: float, p_max_dbm: float, noise_dbm: float) -> float:
    """Average gain (dB) that yields the requested PSNR."""
    return psnr - p_max_dbm + noise_dbm


def draw_unequal_gains(base_gain_db: float, sigma_omega_db: float, num_nodes: int,
                       rng: np.random.Generator, size=None) -> np.ndarray:
    """Per-node dB gains ``base + omega_i`` with ``omega_i ~ N(0, sigma_omega^2)``."""
    if sigma_omega_db < 0:
        raise ValueError("sigma_omega_db must be >= 0")
    batch = () if size is None else tuple(np.atleast_1d(size))
    omega = rng.standard_normal(batch + (num_nodes,)) * sigma_omega_db
    return base_gain_db + omega


def draw_channel_slots(config: SystemConfig, rng: np.random.Generator, n_slots: int = 2,
                       size=None) -> list[ChannelRealization]:
    """Independent realizations for consecutive AirComp slots.

    When ``gain_spread_sigma_db > 0`` the per-node average gains are
    redrawn once (shared by all slots) around the mean of
    ``config.avg_gain_db``.
    """
    if config.gain_spread_sigma_db > 0:
        base = float(np.mean(config.avg_gain_db))
        gains = draw_unequal_gains(base, config.gain_spread_sigma_db, config.num_nodes, rng, size)
        gamma_bar = db_to_linear(gains)
    else:
        gamma_bar = None
    slots = []
    for _ in range(n_slots):
        ch = draw_channel(config, rng, size)
        if gamma_bar is not None:
            ch = ChannelRealization(h=ch.h, gamma_bar=gamma_bar)
        slots.append(ch)
    return slots
