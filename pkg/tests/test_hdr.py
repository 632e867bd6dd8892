import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spadsim.errors import ConfigError, SaturationError
from spadsim.hdr import (
    DRDefinition,
    NoiseCurve,
    ResponseParams,
    analytic_noise_curve,
    correct_linearity,
    default_grid,
    fit_saturation_model,
    forward,
    forward_dual,
    forward_single,
    monte_carlo_noise_curve,
    noise_std_analytic,
    snr_and_dynamic_range,
)

# Frozen high-precision (mpmath, 50 digits) oracle values
SINGLE_AT_NSAT = 2579.0518800205153  # 4080 (1 - e^-1)
DUAL_AT_NSAT_1_8 = 2101.7085346213368  # 2040 [(1 - e^-16/9) + (1 - e^-2/9)]
RAW_STD_AT_NSAT = 30.80227531164061  # sqrt(4080 (1 - e^-1) e^-1)
CORR_STD_AT_NSAT = 83.72926525482536  # raw / e^-1
MAX_SNR_SINGLE = 34.21973868867355  # 20 log10(sqrt(4080) max_x x / sqrt(e^x - 1))

SINGLE = ResponseParams.single(4080)
DUAL = ResponseParams.dual(4080, 1.0, 8.0)

xs = st.floats(0, 5 * 4080, allow_nan=False)
ratios = st.floats(1.0, 64.0)


class TestForward:
    def test_single_examples(self):
        assert forward_single(0.0, SINGLE) == 0.0
        assert forward_single(4080.0, SINGLE) == pytest.approx(SINGLE_AT_NSAT, rel=1e-14)
        assert forward_single(40800.0, SINGLE) == pytest.approx(4080, rel=2e-4)

    def test_dual_examples(self):
        assert forward_dual(4080.0, DUAL) == pytest.approx(DUAL_AT_NSAT_1_8, rel=1e-14)
        assert forward_dual(0.0, DUAL) == 0.0

    @pytest.mark.parametrize("ratio", [1.5, 8.0, 100.0])
    def test_linear_regime(self, ratio):
        p = ResponseParams.dual(4080, 1.0, ratio)
        x = np.linspace(0.1, 40.8, 30)
        np.testing.assert_allclose(forward_dual(x, p), x, rtol=0.01)

    def test_negative(self):
        with pytest.raises(ConfigError):
            forward_single(-1.0, SINGLE)
        with pytest.raises(ConfigError):
            forward_dual(np.array([1.0, -1.0]), DUAL)

    def test_degenerate(self):
        x = default_grid()
        p = ResponseParams.dual(4080, 2.5, 2.5)
        np.testing.assert_allclose(forward_dual(x, p), forward_single(x, SINGLE), rtol=1e-12, atol=0)

    @given(xs, xs, ratios)
    def test_monotone_bounded(self, a, b, r):
        p = ResponseParams.dual(4080, 1.0, r)
        lo, hi = sorted((a, b))
        for params in (SINGLE, p):
            f_lo, f_hi = forward(lo, params), forward(hi, params)
            assert f_lo <= f_hi
            assert f_hi <= min(hi, 4080) + 1e-9

    @given(st.floats(1, 5 * 4080), ratios)
    def test_dual_saturates_later(self, x, r):
        p = ResponseParams.dual(4080, 1.0, r)
        assert forward_dual(x, p) <= forward_single(x, SINGLE) + 1e-9

    def test_dual_still_resolves_where_single_saturated(self):
        x = 40_000.0
        assert 4080 - forward_single(x, SINGLE) < 1
        assert correct_linearity(forward_dual(x, DUAL), DUAL) == pytest.approx(x, rel=1e-6)


class TestCorrection:
    def test_examples(self):
        assert correct_linearity(0.0, SINGLE) == 0.0
        assert correct_linearity(SINGLE_AT_NSAT, SINGLE) == pytest.approx(4080, abs=1e-3)
        assert correct_linearity(DUAL_AT_NSAT_1_8, DUAL) == pytest.approx(4080, abs=1e-2)

    def test_errors(self):
        with pytest.raises(SaturationError):
            correct_linearity(4080.0, SINGLE)
        with pytest.raises(SaturationError):
            correct_linearity([1.0, 5000.0], DUAL)
        with pytest.raises(ConfigError):
            correct_linearity(-2.0, SINGLE)

    @settings(max_examples=200)
    @given(xs, ratios)
    def test_round_trip(self, x, r):
        for p in (SINGLE, ResponseParams.dual(4080, 1.0, r)):
            y = forward(x, p)
            if 1 - y / 4080 < 1e-6:
                continue
            assert abs(correct_linearity(y, p) - x) <= 1e-4 * max(1.0, x)


class TestNoise:
    def test_examples(self):
        assert noise_std_analytic(0.0, SINGLE) == (0.0, 0.0)
        raw, corr = noise_std_analytic(4080.0, SINGLE)
        assert raw == pytest.approx(RAW_STD_AT_NSAT, rel=1e-12)
        assert corr == pytest.approx(CORR_STD_AT_NSAT, rel=1e-12)

    @pytest.mark.parametrize("params", [SINGLE, DUAL])
    def test_shot_noise_limit(self, params):
        x = np.array([0.1, 1.0, 10.0])
        _, corr = noise_std_analytic(x, params)
        np.testing.assert_allclose(corr, np.sqrt(x), rtol=0.01)

    def test_dual_matches_single_when_degenerate(self):
        x = np.logspace(-1, 4, 30)
        a = noise_std_analytic(x, SINGLE)
        b = noise_std_analytic(x, ResponseParams.dual(4080, 3.0, 3.0))
        np.testing.assert_allclose(b, a, rtol=1e-12)

    def test_monte_carlo_example(self):
        c = monte_carlo_noise_curve(SINGLE, [4080.0], 10_000, 9)
        assert c.provenance == "monte-carlo" and c.trials == 10_000
        assert c.std_raw[0] == pytest.approx(RAW_STD_AT_NSAT, rel=0.05)
        assert c.std_corrected[0] == pytest.approx(CORR_STD_AT_NSAT, rel=0.05)

    def test_monte_carlo_deterministic(self):
        a = monte_carlo_noise_curve(DUAL, [10.0, 1000.0], 200, 4)
        b = monte_carlo_noise_curve(DUAL, [10.0, 1000.0], 200, 4)
        np.testing.assert_array_equal(a.std_raw, b.std_raw)
        assert not np.array_equal(a.std_raw, monte_carlo_noise_curve(DUAL, [10.0, 1000.0], 200, 5).std_raw)

    def test_dcr_raises_noise_floor(self, rng):
        grid = [0.5]
        dark = rng.lognormal(math.log(2.0), 1.0, 10_000)  # nonuniform dark rates
        c = monte_carlo_noise_curve(SINGLE, grid, 10_000, 3, dark_cps=dark)
        assert c.std_corrected[0] > math.sqrt(0.5)

    def test_deep_saturation(self):
        c = monte_carlo_noise_curve(SINGLE, [1e6], 500, 1)
        assert c.std_raw[0] == 0.0
        assert np.isnan(c.std_corrected[0])

    def test_errors(self):
        with pytest.raises(ConfigError):
            monte_carlo_noise_curve(SINGLE, [1.0], 99, 0)
        with pytest.raises(ConfigError):
            monte_carlo_noise_curve(SINGLE, [], 100, 0)

    def test_curve_invariants(self):
        with pytest.raises(ConfigError):
            NoiseCurve([2.0, 1.0], [0, 0], [0, 0], [0, 0], "single", "analytic")
        with pytest.raises(ConfigError):
            NoiseCurve([1.0], [0], [-1.0], [0], "single", "analytic")


class TestDynamicRange:
    def test_grid(self):
        g = default_grid()
        assert g[0] == pytest.approx(0.1) and g[-1] == pytest.approx(1e7)
        assert len(g) == 481

    def test_saturation_guard(self):
        c = analytic_noise_curve(SINGLE)
        assert np.all(1 - c.mean_out / 4080 >= 1e-6)
        assert c.provenance == "analytic"

    def test_max_snr_single(self):
        r = snr_and_dynamic_range(analytic_noise_curve(SINGLE, default_grid(1e-1, 1e7, 2000)))
        assert r.max_snr_db == pytest.approx(MAX_SNR_SINGLE, abs=1e-4)

    def test_improvement_bounded(self):
        single = snr_and_dynamic_range(analytic_noise_curve(SINGLE))
        dual = snr_and_dynamic_range(analytic_noise_curve(DUAL))
        gain = dual.dr_db - single.dr_db
        assert 10.0 <= gain <= 20 * math.log10(4.5)

    def test_threshold(self):
        c = analytic_noise_curve(SINGLE)
        assert snr_and_dynamic_range(c, DRDefinition(10.0)).dr_db < snr_and_dynamic_range(c).dr_db
        assert "0 dB" in DRDefinition().describe()
        with pytest.raises(ConfigError):
            snr_and_dynamic_range(c, DRDefinition(60.0))

    def test_degenerate_curve(self):
        c = NoiseCurve([1.0, 2.0, 3.0], [1, 2, 3], [0, 0, 0], [0, 0, 0], "single", "analytic")
        with pytest.raises(ConfigError):
            snr_and_dynamic_range(c)


class TestFit:
    def test_single(self):
        x = np.logspace(1, 4.5, 12)
        f = fit_saturation_model(np.c_[x, forward_single(x, SINGLE)], "single")
        assert f.n_sat == pytest.approx(4080, rel=1e-3)
        assert not f.low_confidence and f.residual_rms < 1e-6

    def test_dual(self):
        x = np.logspace(1, 5, 16)
        f = fit_saturation_model(np.c_[x, forward_dual(x, DUAL)], "dual")
        assert f.ratio == pytest.approx(8.0, rel=0.01)
        assert f.n_sat == pytest.approx(4080, rel=1e-3)

    def test_linear_only_is_low_confidence(self):
        x = np.linspace(1, 30, 6)
        assert fit_saturation_model(np.c_[x, forward_single(x, SINGLE)]).low_confidence

    def test_errors(self):
        with pytest.raises(ConfigError):
            fit_saturation_model([(1.0, 1.0)])
        with pytest.raises(ConfigError):
            fit_saturation_model([(1, 1), (2, 2), (3, 3), (4, 4)], "triple")


def test_params():
    with pytest.raises(ConfigError):
        ResponseParams.single(0)
    with pytest.raises(ConfigError):
        ResponseParams.dual(4080, 0.0, 8.0)
    assert ResponseParams.single(4080, 4.5).matches(DUAL)
    with pytest.raises(ConfigError):
        ResponseParams.single(4080, 4.0).require_match(DUAL)
