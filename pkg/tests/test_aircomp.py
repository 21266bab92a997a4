import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from aircomp_lab.aircomp import (
    DegenerateRoundError,
    IDENTITY_TRUNCATION,
    SingularChannelError,
    TruncationParams,
    adaptive_weighted_average,
    encode,
    exact_weighted_average,
    power_control_rho,
    pure_weighted_average,
    required_slots,
    simple_average,
    transmit_power,
    transmit_sum,
    truncate_weight,
)
from aircomp_lab.channel import ChannelKind, ChannelRealization, SystemConfig, draw_channel_slots


def unit_channel(m):
    return ChannelRealization(h=np.ones(m, dtype=complex), gamma_bar=np.ones(m))


def noiseless(m, length=1, kind=ChannelKind.AWGN):
    return SystemConfig(m, length, p_max=1.0, noise_floor=0.0, channel_kind=kind)


class TestTruncationParams:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            TruncationParams(2.0, 1.0)
        with pytest.raises(ValueError):
            TruncationParams(-1.0, 1.0)

    def test_ratio(self):
        assert TruncationParams(3.0, 7.0).ratio == pytest.approx(3 / 7)
        assert TruncationParams(0.0, 0.0).ratio == 1.0


class TestPowerControl:
    def test_min_over_nodes(self):
        rho = power_control_rho([2.0, 4.0], unit_channel(2), p_max=1.0)
        assert rho == pytest.approx(1 / 16)

    def test_single_node(self):
        assert power_control_rho([1.0], unit_channel(1), 1.0) == pytest.approx(1.0)

    def test_zero_norm_nodes_are_skipped(self):
        assert power_control_rho([0.0, 2.0], unit_channel(2), 1.0) == pytest.approx(0.25)

    def test_all_zero_round(self):
        with pytest.raises(DegenerateRoundError, match="degenerate all-zero round"):
            power_control_rho([0.0, 0.0], unit_channel(2), 1.0)

    def test_equal_norms_all_at_full_power(self):
        m = np.ones((3, 4))
        np.testing.assert_allclose(transmit_power(m, unit_channel(3), 2.5), 2.5)

    def test_binding_node_at_full_power(self, rng):
        m = rng.standard_normal((5, 6))
        h = (rng.standard_normal(5) + 1j * rng.standard_normal(5)) / np.sqrt(2)
        ch = ChannelRealization(h=h, gamma_bar=np.full(5, 1e-3))
        power = transmit_power(m, ch, 0.7)
        assert power.max() == pytest.approx(0.7, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(
        hnp.arrays(float, st.tuples(st.integers(1, 6), st.integers(1, 5)),
                   elements=st.floats(-1e3, 1e3)),
        st.integers(0, 2**32 - 1),
        st.floats(1e-3, 1e3),
    )
    def test_power_feasibility(self, m, seed, p_max):
        # rho = amp^2 / ||m||^2 overflows for subnormal-scale messages
        norms = np.linalg.norm(m, axis=-1)
        assume(np.any(norms > 0) and norms[norms > 0].min() > 1e-100)
        g = np.random.default_rng(seed)
        n = m.shape[0]
        h = (g.standard_normal(n) + 1j * g.standard_normal(n)) / np.sqrt(2)
        ch = ChannelRealization(h=h, gamma_bar=10 ** g.uniform(-9, 0, n))
        assert np.all(transmit_power(m, ch, p_max) <= p_max + 1e-12 * max(1.0, p_max))


class TestEncode:
    def test_identity(self):
        np.testing.assert_allclose(encode([1.0, -2.0], 1.0, 1.0, 1.0), [1.0, -2.0])

    def test_imaginary_channel_rotates(self):
        np.testing.assert_allclose(encode([1.0, 2.0], 1.0, 1.0, 1j), [-1j, -2j])

    def test_singular_channel(self):
        with pytest.raises(SingularChannelError, match="singular channel"):
            encode([1.0], 1.0, 1.0, 0.0)


class TestTransmitSum:
    def test_noiseless_awgn(self, rng):
        m = rng.standard_normal((4, 7))
        res = transmit_sum(m, unit_channel(4), noiseless(4, 7), rng)
        np.testing.assert_allclose(res.r_hat, m.sum(0), rtol=1e-12)

    def test_noiseless_rayleigh(self, rng):
        cfg = noiseless(5, 3, ChannelKind.RAYLEIGH)
        m = rng.standard_normal((5, 3))
        (ch,) = draw_channel_slots(cfg, rng, n_slots=1)
        res = transmit_sum(m, ch, cfg, rng)
        np.testing.assert_allclose(res.r_hat, m.sum(0), rtol=1e-12, atol=1e-12)

    def test_noise_variance_closed_form(self, rng):
        n = 10**5
        cfg = SystemConfig(2, 1, p_max=1.0, noise_floor=0.3)
        m = np.broadcast_to(np.array([[1.0], [2.0]]), (n, 2, 1))
        ch = ChannelRealization(h=np.ones((n, 2), complex), gamma_bar=np.ones((n, 2)))
        res = transmit_sum(m, ch, cfg, rng)
        rho = res.rho[0]
        assert rho == pytest.approx(0.25)
        r = res.r_hat[:, 0]
        se = r.std() / np.sqrt(n)
        assert abs(r.mean() - 3.0) < 4 * se
        assert r.var() == pytest.approx(cfg.noise_floor / (2 * rho), rel=0.03)


class TestTruncateWeight:
    def test_figure_example(self):
        p = TruncationParams(3.0, 7.0)
        np.testing.assert_array_equal(truncate_weight([5.0, 9.0, 1.0], p), [5.0, 7.0, 3.0])

    def test_identity(self):
        w = np.array([0.0, 1e-9, 3.0, 1e12])
        np.testing.assert_array_equal(truncate_weight(w, IDENTITY_TRUNCATION), w)

    def test_constant(self):
        np.testing.assert_array_equal(truncate_weight([0.0, 2.0, 50.0], TruncationParams(4, 4)),
                                      [4.0, 4.0, 4.0])

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            truncate_weight([-1.0], IDENTITY_TRUNCATION)

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 100), st.floats(0, 100))
    def test_monotone_and_bounded(self, a, b, w1, w2):
        p = TruncationParams(min(a, b), max(a, b))
        lo, hi = sorted((w1, w2))
        g_lo, g_hi = truncate_weight([lo, hi], p)
        assert g_lo <= g_hi
        assert p.delta_min <= g_lo <= p.delta_max


class TestProtocolsNoiseless:
    def test_pure_equal_weights(self, rng):
        cfg = noiseless(2)
        slots = draw_channel_slots(cfg, rng)
        est = pure_weighted_average([[1.0], [1.0]], [[0.0], [2.0]], slots, cfg, rng).estimate
        assert est[0] == pytest.approx(1.0)

    def test_pure_unequal_weights(self, rng):
        cfg = noiseless(2)
        slots = draw_channel_slots(cfg, rng)
        est = pure_weighted_average([[1.0], [3.0]], [[4.0], [0.0]], slots, cfg, rng).estimate
        assert est[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("values, expected", [([[0.0], [2.0]], 1.0), ([[1.0], [2.0], [3.0]], 2.0)])
    def test_simple_mean(self, rng, values, expected):
        cfg = noiseless(len(values))
        (slot,) = draw_channel_slots(cfg, rng, n_slots=1)
        assert simple_average(values, slot, cfg, rng).estimate[0] == pytest.approx(expected)

    def test_flat_truncation_gives_unweighted_mean(self, rng):
        cfg = noiseless(4, 6, ChannelKind.RAYLEIGH)
        w = rng.exponential(size=(4, 6))
        s = rng.standard_normal((4, 6))
        res = adaptive_weighted_average(w, s, TruncationParams(2.0, 2.0),
                                        draw_channel_slots(cfg, rng), cfg, rng)
        np.testing.assert_allclose(res.estimate, s.mean(0), rtol=1e-10)

    def test_figure_effective_weights(self, rng):
        cfg = noiseless(3)
        s = np.array([[1.0], [0.0], [0.0]])
        res = adaptive_weighted_average([[1.0], [5.0], [9.0]], s, TruncationParams(3.0, 7.0),
                                        draw_channel_slots(cfg, rng), cfg, rng)
        # effective weights 3, 5, 7 put 3/15 on the first node
        assert res.estimate[0] == pytest.approx(3 / 15)
        assert res.denominator[0] == pytest.approx(15.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 16), st.integers(0, 2**32 - 1))
    def test_match_direct_evaluation(self, m, length, seed):
        g = np.random.default_rng(seed)
        cfg = noiseless(m, length, ChannelKind.RAYLEIGH)
        w = g.exponential(size=(m, length)) + 1e-3
        s = g.standard_normal((m, length))
        ref = np.sum(w * s, 0) / np.sum(w, 0)
        pure = pure_weighted_average(w, s, draw_channel_slots(cfg, g), cfg, g).estimate
        np.testing.assert_allclose(pure, ref, rtol=1e-10, atol=1e-12)
        (slot,) = draw_channel_slots(cfg, g, n_slots=1)
        simple = simple_average(s, slot, cfg, g).estimate
        np.testing.assert_allclose(simple, s.mean(0), rtol=1e-10, atol=1e-12)

    def test_scalar_weights_match_expanded(self, rng):
        cfg = noiseless(3, 5)
        w = np.array([1.0, 4.0, 2.0])
        s = rng.standard_normal((3, 5))
        slots = draw_channel_slots(cfg, rng)
        a = pure_weighted_average(w, s, slots, cfg, rng, scalar_weights=True).estimate
        b = pure_weighted_average(np.repeat(w[:, None], 5, 1), s, slots, cfg, rng).estimate
        np.testing.assert_allclose(a, b, rtol=1e-12)
        np.testing.assert_allclose(a, exact_weighted_average(w, s, scalar_weights=True), rtol=1e-12)


class TestProtocolsNoisy:
    def test_identity_truncation_is_bitwise_pure(self):
        cfg = SystemConfig(4, 3, 1.0, 1e-2, channel_kind="rayleigh")
        g = np.random.default_rng(3)
        w = g.exponential(size=(4, 3))
        s = g.standard_normal((4, 3))
        slots = draw_channel_slots(cfg, g)
        a = pure_weighted_average(w, s, slots, cfg, np.random.default_rng(9))
        b = adaptive_weighted_average(w, s, IDENTITY_TRUNCATION, slots, cfg, np.random.default_rng(9))
        np.testing.assert_array_equal(a.estimate, b.estimate)

    def test_simple_noise_variance(self, rng):
        n, m = 10**5, 3
        cfg = SystemConfig(m, 1, p_max=1.0, noise_floor=0.5)
        s = np.broadcast_to(np.array([[1.0], [2.0], [-1.0]]), (n, m, 1))
        ch = ChannelRealization(h=np.ones((n, m), complex), gamma_bar=np.ones((n, m)))
        res = simple_average(s, ch, cfg, rng)
        rho = res.rho[0][0]
        err = res.estimate[:, 0] - 2.0 / 3.0
        assert err.var() == pytest.approx(cfg.noise_floor / (2 * rho * m**2), rel=0.03)

    def test_pure_variance_grows_as_rho_shrinks(self):
        n = 20000
        w = np.array([[1.0], [0.5]])
        s = np.array([[1.0], [-1.0]])
        variances = []
        for gain_db in (0.0, -5.0, -10.0, -15.0):
            cfg = SystemConfig(2, 1, 1.0, 0.01, avg_gain_db=(gain_db, gain_db))
            g = np.random.default_rng(0)
            slots = draw_channel_slots(cfg, g, size=n)
            est = pure_weighted_average(np.broadcast_to(w, (n, 2, 1)), np.broadcast_to(s, (n, 2, 1)),
                                        slots, cfg, g).estimate
            variances.append(np.var(est))
        assert all(a < b for a, b in zip(variances, variances[1:]))

    def test_sign_flip_is_flagged(self):
        cfg = SystemConfig(1, 1, 1.0, 1.0)
        g = np.random.default_rng(0)
        n = 2000
        slots = draw_channel_slots(cfg, g, size=n)
        res = pure_weighted_average(np.full((n, 1, 1), 1e-3), np.ones((n, 1, 1)), slots, cfg, g)
        assert res.diverged.any()
        assert np.all(res.diverged == (res.denominator <= 0) | ~np.isfinite(res.estimate))

    def test_transmit_power_falls_with_delta_max(self):
        # smaller caps flatten the weights, so every node can transmit harder
        g = np.random.default_rng(5)
        n, m, length = 4000, 8, 10
        cfg = SystemConfig(m, length, 1.0, 1.0)
        w = g.exponential(size=(n, m, length))
        s = g.standard_normal((n, m, length))
        ch = ChannelRealization(h=np.ones((n, m), complex), gamma_bar=np.ones((n, m)))
        powers = [np.mean(transmit_power(truncate_weight(w, TruncationParams(0.0, d)) * s, ch, 1.0))
                  for d in (0.5, 1, 2, 4, 8)]
        assert all(a >= b for a, b in zip(powers, powers[1:]))


class TestSlots:
    def test_table(self):
        assert required_slots("pure", 8) == 2
        assert required_slots("adaptive", 8) == 2
        assert required_slots("simple", 8) == 1
        assert required_slots("digital", 8) == 16

    def test_unknown(self):
        with pytest.raises(ValueError):
            required_slots("cop", 4)
