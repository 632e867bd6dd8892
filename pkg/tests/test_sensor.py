import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spadsim.errors import CapacityError, ConfigError, DimensionError
from spadsim.gate import GateProfile, PixelMaps
from spadsim.scene import Scene
from spadsim.sensor import (
    FRAME_EXPOSURE_NS,
    DcrParams,
    DcrPopulation,
    ExposureSchedule,
    SensorConfig,
    accumulate_frames,
    avalanche_event_counts,
    dcr_at_temperature,
    detection_probability,
    expected_counts,
    fit_activation_energy,
    frame_mu,
    mu_map,
    simulate_binary_frame,
    simulate_frame_stack,
    simulate_mu,
)

K_B = 8.617333262e-5
ON_PLATEAU = 1.9  # commanded gate position putting a zero-delay return mid-plateau


def uniform_mu(width, height, mu):
    """Scene whose plateau return gives exactly ``mu`` per frame on an ideal sensor."""
    return Scene.uniform(width, height, [(mu, 0.0)])


class TestDetectionProbability:
    def test_examples(self):
        assert detection_probability(0.0) == 0.0
        assert detection_probability(1.0) == pytest.approx(0.6321205588285577, abs=1e-6)
        assert detection_probability(50.0) == pytest.approx(1.0, abs=1e-9)

    def test_negative(self):
        with pytest.raises(ConfigError):
            detection_probability(-0.1)

    @given(st.floats(0, 100), st.floats(0, 100))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert 0 <= detection_probability(lo) <= detection_probability(hi) <= 1


class TestFrameMu:
    def test_dark_scene(self, ideal_config):
        cfg = ideal_config(4, 4, dcr=2.0)
        mu = frame_mu((1, 1), Scene.empty(4, 4), cfg, 0.0)
        assert mu == pytest.approx(2.0 * 41.666666e-6, rel=1e-5)

    def test_plateau(self, ideal_config):
        assert frame_mu((0, 0), uniform_mu(4, 4, 0.5), ideal_config(4, 4), ON_PLATEAU) == pytest.approx(0.5)

    def test_outside_gate(self, ideal_config):
        cfg = ideal_config(4, 4, dcr=2.0)
        mu = frame_mu((0, 0), Scene.uniform(4, 4, [(5.0, 20.0)]), cfg, ON_PLATEAU)
        assert mu == pytest.approx(2.0 * FRAME_EXPOSURE_NS * 1e-9)

    def test_pixel_out_of_range(self, ideal_config):
        with pytest.raises(DimensionError):
            frame_mu((4, 0), Scene.empty(4, 4), ideal_config(4, 4), 0.0)

    def test_ambient_and_pdp(self):
        maps = PixelMaps.constant(2, 2, 0.0, 3.0)
        cfg = SensorConfig(2, 2, maps, GateProfile.anchored(3.0), pdp_efficiency=0.5, dcr=0.0, crosstalk_p=0)
        sc = Scene.uniform(2, 2, [(1.0, 0.0)], ambient=0.01)
        assert frame_mu((0, 0), sc, cfg, 1.5) == pytest.approx(0.5 + 0.03)

    def test_skew_shifts_edge(self):
        maps = PixelMaps(np.array([[0.0, 0.2, 0.4]]), np.full((1, 3), 3.8))
        cfg = SensorConfig(3, 1, maps, GateProfile.anchored(), dcr=0.0, crosstalk_p=0)
        sc = Scene.uniform(3, 1, [(1.0, 1.0)])
        # median position is 0.2; each pixel's half-rise lands at delay + skew
        mu = [mu_map(sc, cfg, 1.0 + s)[0, i] for i, s in enumerate((-0.2, 0.0, 0.2))]
        np.testing.assert_allclose(mu, 0.5)

    @given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 0.1), st.floats(0, 0.1), st.floats(0, 100), st.floats(0, 100))
    def test_monotone(self, a1, a2, amb1, amb2, d1, d2):
        cfg1 = SensorConfig.ideal(2, 1, dcr=min(d1, d2))
        cfg2 = SensorConfig.ideal(2, 1, dcr=max(d1, d2))
        lo = Scene.uniform(2, 1, [(min(a1, a2), 0.3)], ambient=min(amb1, amb2))
        hi = Scene.uniform(2, 1, [(max(a1, a2), 0.3)], ambient=max(amb1, amb2))
        sched = ExposureSchedule.single(FRAME_EXPOSURE_NS, 100)
        assert np.all(expected_counts(lo, cfg1, 1.0, sched) <= expected_counts(hi, cfg2, 1.0, sched) + 1e-12)


class TestBinaryFrames:
    def test_dark(self, ideal_config):
        f = simulate_binary_frame(Scene.empty(8, 8), ideal_config(), 0.0, 0, 1)
        assert f.bits.shape == (8, 8) and not f.bits.any()

    def test_saturated(self, ideal_config):
        f = simulate_binary_frame(uniform_mu(8, 8, 1e6), ideal_config(), ON_PLATEAU, 3, 1)
        assert f.bits.all()

    def test_fire_rate(self, ideal_config):
        stack = simulate_frame_stack(uniform_mu(64, 64, 1.0), ideal_config(64, 64), ON_PLATEAU,
                                     ExposureSchedule.single(FRAME_EXPOSURE_NS, 10_000), 5)
        assert stack.mean() == pytest.approx(1 - math.exp(-1), abs=0.015)

    def test_single_frame_matches_stack(self):
        cfg = SensorConfig.ideal(16, 16, crosstalk_p=0.1)
        sc = uniform_mu(16, 16, 0.3)
        stack = simulate_frame_stack(sc, cfg, ON_PLATEAU, ExposureSchedule.single(FRAME_EXPOSURE_NS, 9), 11)
        for k in (0, 5, 8):
            np.testing.assert_array_equal(simulate_binary_frame(sc, cfg, ON_PLATEAU, k, 11).bits, stack[k])

    def test_dimension_mismatch(self, ideal_config):
        with pytest.raises(DimensionError):
            simulate_binary_frame(Scene.empty(4, 4), ideal_config(8, 8), 0.0, 0, 1)

    def test_seed_changes_output(self, ideal_config):
        sc = uniform_mu(16, 16, 0.7)
        a = simulate_binary_frame(sc, ideal_config(16, 16), ON_PLATEAU, 0, 1).bits
        b = simulate_binary_frame(sc, ideal_config(16, 16), ON_PLATEAU, 0, 2).bits
        assert not np.array_equal(a, b)


class TestAccumulate:
    def test_full_scale(self, ideal_config):
        cfg = ideal_config(4, 4, n_sat=16_320)
        img = accumulate_frames(uniform_mu(4, 4, 1e6), cfg, ON_PLATEAU, ExposureSchedule.single(FRAME_EXPOSURE_NS, 16_320), 0)
        assert np.all(img == 16_320)

    def test_dark(self, ideal_config):
        img = accumulate_frames(Scene.empty(8, 8), ideal_config(), 0.0, ExposureSchedule.single(FRAME_EXPOSURE_NS, 4080), 0)
        assert not img.any()

    def test_mean(self, ideal_config):
        img = accumulate_frames(uniform_mu(32, 32, 1.0), ideal_config(32, 32), ON_PLATEAU,
                                ExposureSchedule.single(FRAME_EXPOSURE_NS, 4080), 3)
        p = 1 - math.exp(-1)
        sigma_mean = math.sqrt(4080 * p * (1 - p) / img.size)
        assert abs(img.mean() - 2579.0518800205153) < 3 * sigma_mean

    def test_capacity(self, ideal_config):
        with pytest.raises(CapacityError):
            accumulate_frames(Scene.empty(2, 2), ideal_config(2, 2), 0.0, ExposureSchedule.single(1.0, 4081), 0)

    def test_dual_interleave(self, ideal_config):
        # short frames first: with tau_S -> 0 only odd-numbered frames can fire
        cfg = ideal_config(4, 4)
        sched = ExposureSchedule.dual(1e-9, 2 * FRAME_EXPOSURE_NS, 10)
        stack = simulate_frame_stack(uniform_mu(4, 4, 50.0), cfg, ON_PLATEAU, sched, 0)
        assert not stack[0::2].any() and stack[1::2].all()

    def test_binomial_consistency(self):
        frames = 10_000
        mu = np.full((1, 1, 4096), 0.4)
        counts, _, _ = simulate_mu(mu, frames, 21, width=64, height=64)
        p = 1 - math.exp(-0.4)
        c = counts[0].astype(float)
        assert abs(c.mean() - frames * p) < 4 * math.sqrt(frames * p * (1 - p) / c.size)
        assert c.var(ddof=1) == pytest.approx(frames * p * (1 - p), rel=0.15)

    def test_matched_dual(self):
        single = ExposureSchedule.single(4.5, 10)
        dual = ExposureSchedule.matched_dual(4.5, 8, 10)
        assert dual.tau_s == pytest.approx(1.0) and dual.tau_l == pytest.approx(8.0)
        assert dual.total_exposure_matches(single)
        assert not ExposureSchedule.dual(1, 9, 10).total_exposure_matches(single)

    def test_invalid_schedule(self):
        with pytest.raises(ConfigError):
            ExposureSchedule.single(0.0, 10)
        with pytest.raises(ConfigError):
            ExposureSchedule("triple", 10, 1.0)


class TestCrosstalk:
    def test_neighbour_rate(self):
        # isolated bright pixels in a dark array
        w = h = 30
        mu = np.zeros((h, w))
        mu[5::10, 5::10] = 1e3
        cfg_p = 0.05
        frames = 4000
        counts, _, _ = simulate_mu(mu.reshape(1, 1, -1), frames, 8, width=w, height=h, crosstalk_p=cfg_p)
        c = counts[0].reshape(h, w)
        neigh = np.concatenate([c[4::10, 5::10].ravel(), c[6::10, 5::10].ravel(),
                                c[5::10, 4::10].ravel(), c[5::10, 6::10].ravel()])
        n = neigh.size * frames
        assert neigh.sum() / n == pytest.approx(cfg_p, abs=4 * math.sqrt(cfg_p * (1 - cfg_p) / n))
        # single generation: second neighbours stay dark
        assert c[3::10, 5::10].sum() == 0 and c[4::10, 4::10].sum() == 0

    def test_invalid(self):
        with pytest.raises(ConfigError):
            SensorConfig.ideal(2, 2, crosstalk_p=0.25)


class TestDcr:
    def test_floor_only(self):
        p = DcrParams(tunneling_floor=0.3, diffusion_prefactor=0.0)
        assert dcr_at_temperature(p, np.array([100.0, 300.0, 400.0])) == pytest.approx([0.3] * 3)

    def test_arrhenius_ratio(self):
        p = DcrParams(0.0, 1.0, 1.1)
        ratio = dcr_at_temperature(p, 303.0) / dcr_at_temperature(p, 293.0)
        assert ratio == pytest.approx(4.211574815194167, rel=1e-9)

    def test_calibrated(self):
        assert dcr_at_temperature(DcrParams.calibrated(2.0, 293.0), 293.0) == pytest.approx(2.0)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            dcr_at_temperature(DcrParams(), 0.0)

    @given(st.floats(1, 500), st.floats(1, 500))
    def test_monotone(self, t1, t2):
        p = DcrParams.calibrated()
        lo, hi = sorted((t1, t2))
        assert dcr_at_temperature(p, lo) <= dcr_at_temperature(p, hi)

    @pytest.mark.parametrize("ea", [1.1, 0.55])
    def test_fit_round_trip(self, ea):
        t = np.linspace(303, 363, 7)
        p = DcrParams(0.5, 1e9 * math.exp(ea / (K_B * 303)), ea)
        assert fit_activation_energy(np.c_[t, dcr_at_temperature(p, t)], 0.5) == pytest.approx(ea, abs=1e-6)

    def test_fit_flat(self, rng):
        t = np.linspace(250, 350, 10)
        dcr = 3.0 * (1 + 1e-3 * rng.standard_normal(10))
        assert abs(fit_activation_energy(np.c_[t, dcr])) < 0.01

    def test_fit_errors(self):
        with pytest.raises(ConfigError):
            fit_activation_energy([[300, 1.0], [310, 2.0]])
        with pytest.raises(ConfigError):
            fit_activation_energy([[300, 1.0], [310, 2.0], [320, 0.4]], tunneling_floor=0.5)

    def test_population(self):
        pop = DcrPopulation(median_cps=2.0)
        m = pop.rate_map(64, 64, seed=1)
        assert np.median(m) == pytest.approx(2.0)
        assert m.mean() > np.median(m)  # hot pixels skew the distribution
        floor, pref, ea = pop.sample(64, 64, seed=1)
        assert set(np.unique(ea[ea >= 1.1 - 1e-12])) == {1.1}
        assert np.mean(ea < 1.1) == pytest.approx(0.2, abs=0.03)
        assert pop.rate_map(64, 64, 1, 330.0).mean() > m.mean()


class TestAvalanches:
    def test_ratio_400(self):
        sc = uniform_mu(8, 8, 400.0)
        cfg = SensorConfig.ideal(8, 8)
        a = avalanche_event_counts(sc, cfg, ON_PLATEAU, "A", 500, 4)
        b = avalanche_event_counts(sc, cfg, ON_PLATEAU, "B", 500, 4)
        assert a.mean.mean() == pytest.approx(400, abs=3 * math.sqrt(400 / (64 * 500)))
        assert np.all(b.mean == 1.0)
        np.testing.assert_array_equal(a.detections, b.detections)

    def test_dark(self, ideal_config):
        for model in "AB":
            assert not avalanche_event_counts(Scene.empty(4, 4), ideal_config(4, 4), 0.0, model, 100, 0).mean.any()

    @pytest.mark.parametrize("mu", [0.05, 0.7, 3.0, 45.0])
    def test_pixel_a_poisson_mean(self, mu):
        sc = uniform_mu(32, 32, mu)
        a = avalanche_event_counts(sc, SensorConfig.ideal(32, 32), ON_PLATEAU, "A", 400, 6)
        n = 32 * 32 * 400
        assert a.mean.mean() == pytest.approx(mu, abs=4 * math.sqrt(mu / n))

    def test_models_share_binary_output_with_crosstalk(self):
        cfg = SensorConfig.ideal(16, 16, crosstalk_p=0.2)
        sc = uniform_mu(16, 16, 0.2)
        a = avalanche_event_counts(sc, cfg, ON_PLATEAU, "A", 300, 2)
        b = avalanche_event_counts(sc, cfg, ON_PLATEAU, "B", 300, 2)
        np.testing.assert_array_equal(a.detections, b.detections)
        assert np.all(a.mean >= b.mean)

    def test_bad_model(self, ideal_config):
        with pytest.raises(ConfigError):
            avalanche_event_counts(Scene.empty(4, 4), ideal_config(4, 4), 0.0, "C", 10, 0)


def test_config_validation():
    maps = PixelMaps.constant(4, 4)
    with pytest.raises(ConfigError):
        SensorConfig(4, 4, maps, GateProfile.anchored(), pdp_efficiency=1.5)
    with pytest.raises(ConfigError):
        SensorConfig(4, 4, maps, GateProfile.anchored(), dcr=-1)
    with pytest.raises(ConfigError):
        SensorConfig(4, 4, maps, GateProfile.anchored(), n_sat=0)
    with pytest.raises(DimensionError):
        SensorConfig(5, 4, maps, GateProfile.anchored())
