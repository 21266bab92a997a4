import numpy as np
import pytest
from hypothesis import given, strategies as st

from aircomp_lab.channel import (
    ChannelKind,
    RadioSystem,
    SystemConfig,
    db_to_linear,
    draw_channel,
    draw_channel_slots,
    draw_unequal_gains,
    gain_db_for_psnr,
    linear_to_db,
    psnr_db,
)


class TestSystemConfig:
    def test_default_gains_fill_every_node(self):
        cfg = SystemConfig(num_nodes=3, message_len=2, p_max=1.0, noise_floor=0.0)
        assert cfg.avg_gain_db == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("kwargs, msg", [
        (dict(num_nodes=0), "num_nodes"),
        (dict(message_len=0), "message_len"),
        (dict(p_max=0.0), "p_max"),
        (dict(noise_floor=-1.0), "noise_floor"),
        (dict(avg_gain_db=(0.0, 0.0)), "avg_gain_db has 2 entries"),
    ])
    def test_invariants_are_enforced(self, kwargs, msg):
        base = dict(num_nodes=3, message_len=2, p_max=1.0, noise_floor=0.0)
        base.update(kwargs)
        with pytest.raises(ValueError, match=msg):
            SystemConfig(**base)

    def test_from_db_converts_once(self):
        cfg = SystemConfig.from_db(2, 4, p_max_dbm=10.0, noise_dbm=-90.0, avg_gain_db=-70.0)
        assert cfg.p_max == pytest.approx(10.0)
        assert cfg.noise_floor == pytest.approx(1e-9)
        np.testing.assert_allclose(cfg.gamma_bar, [1e-7, 1e-7])

    def test_infinite_negative_noise_means_noiseless(self):
        cfg = SystemConfig.from_db(1, 1, 0.0, -np.inf)
        assert cfg.noise_floor == 0.0

    def test_radio_system_builds_matching_psnr(self):
        radio = RadioSystem(num_nodes=4, gain_db=-60.0)
        cfg = radio.build(message_len=10)
        assert psnr_db(cfg) == pytest.approx(radio.psnr_db) == pytest.approx(40.0)
        assert radio.build(10, num_nodes=7).num_nodes == 7

    def test_radio_system_rejects_unknown_channel(self):
        with pytest.raises(ValueError):
            RadioSystem(channel="rician")


class TestConversions:
    def test_minus_seventy_db(self):
        assert db_to_linear(-70.0) == pytest.approx(1e-7)

    @given(st.floats(min_value=-200, max_value=200))
    def test_round_trip(self, x):
        assert linear_to_db(db_to_linear(x)) == pytest.approx(x, rel=1e-12, abs=1e-12)


class TestDrawChannel:
    def test_awgn_is_unit(self, rng):
        cfg = SystemConfig(3, 1, 1.0, 0.0)
        ch = draw_channel(cfg, rng)
        np.testing.assert_array_equal(ch.h, np.ones(3, dtype=complex))
        np.testing.assert_array_equal(ch.gamma_bar, np.ones(3))

    def test_awgn_does_not_touch_rng(self):
        cfg = SystemConfig(3, 1, 1.0, 0.0)
        a, b = np.random.default_rng(1), np.random.default_rng(1)
        draw_channel(cfg, a)
        assert a.random() == b.random()

    def test_rayleigh_moments(self, rng):
        cfg = SystemConfig(10**5, 1, 1.0, 0.0, channel_kind=ChannelKind.RAYLEIGH)
        h = draw_channel(cfg, rng).h
        assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.02
        assert abs(np.mean(h.real)) < 0.02 and abs(np.mean(h.imag)) < 0.02
        # half of the power on each quadrature
        assert np.var(h.real) == pytest.approx(0.5, abs=0.01)

    def test_gain_conversion(self, rng):
        cfg = SystemConfig(1, 1, 1.0, 0.0, avg_gain_db=(-70.0,))
        assert draw_channel(cfg, rng).gamma_bar[0] == pytest.approx(1e-7)

    def test_batched_shape(self, rng):
        cfg = SystemConfig(4, 1, 1.0, 0.0, channel_kind="rayleigh")
        assert draw_channel(cfg, rng, size=(5, 2)).h.shape == (5, 2, 4)

    def test_slots_are_independent(self, rng):
        cfg = SystemConfig(4, 1, 1.0, 0.0, channel_kind="rayleigh")
        a, b = draw_channel_slots(cfg, rng, n_slots=2)
        assert not np.allclose(a.h, b.h)

    def test_slots_share_spread_gains(self, rng):
        cfg = SystemConfig(4, 1, 1.0, 0.0, avg_gain_db=(-50.0,) * 4, gain_spread_sigma_db=6.0)
        a, b = draw_channel_slots(cfg, rng, n_slots=2)
        np.testing.assert_array_equal(a.gamma_bar, b.gamma_bar)
        assert np.ptp(a.gamma_bar) > 0


class TestPsnr:
    def test_reference_budget(self):
        cfg = SystemConfig.from_db(4, 1, p_max_dbm=10.0, noise_dbm=-90.0, avg_gain_db=0.0)
        assert psnr_db(cfg) == pytest.approx(100.0)

    def test_power_equals_noise(self):
        cfg = SystemConfig(1, 1, p_max=2.0, noise_floor=2.0)
        assert psnr_db(cfg) == pytest.approx(0.0)

    def test_direct_evaluation(self):
        cfg = SystemConfig(2, 1, p_max=1.0, noise_floor=1e-5, avg_gain_db=(-20.0, -20.0))
        assert psnr_db(cfg) == pytest.approx(30.0)

    def test_unequal_gains_rejected(self):
        cfg = SystemConfig(2, 1, 1.0, 1.0, avg_gain_db=(0.0, -3.0))
        with pytest.raises(ValueError, match="psnr undefined for unequal gains"):
            psnr_db(cfg)

    @given(st.floats(-20, 120), st.floats(-10, 30), st.floats(-120, -60))
    def test_gain_for_psnr_inverts(self, psnr, p_max_dbm, noise_dbm):
        gain = gain_db_for_psnr(psnr, p_max_dbm, noise_dbm)
        cfg = SystemConfig.from_db(1, 1, p_max_dbm, noise_dbm, gain)
        assert psnr_db(cfg) == pytest.approx(psnr, abs=1e-9)


class TestUnequalGains:
    def test_zero_spread(self, rng):
        np.testing.assert_array_equal(draw_unequal_gains(-70.0, 0.0, 5, rng), np.full(5, -70.0))

    def test_spread_statistics(self, rng):
        g = draw_unequal_gains(-70.0, 10.0, 10**5, rng)
        assert abs(np.std(g) - 10.0) < 0.2
        g = draw_unequal_gains(-50.0, 4.0, 10**5, rng)
        assert abs(np.mean(g) + 50.0) < 0.1

    def test_negative_spread_rejected(self, rng):
        with pytest.raises(ValueError):
            draw_unequal_gains(0.0, -1.0, 2, rng)
