import numpy as np
import pytest
from scipy import signal as sg
from scipy import stats

from cvqkdsim.core import RandomSource, SampleBuffer, SymbolFrame
from cvqkdsim.txdsp import (
    GaussianConstellation,
    HighPassSpec,
    PilotSpec,
    RrcFilter,
    add_pilot,
    build_symbols,
    highpass,
    inversion_sample,
    quantize_dac,
    upsample_shape,
)

CONST = GaussianConstellation()


class TestConstellation:
    def test_level_count_and_symmetry(self):
        levels = CONST.levels_unit_sigma()
        assert len(levels) == 64
        assert np.allclose(levels, -levels[::-1])

    def test_median_draw_maps_to_center(self):
        # u = 0.5 sits exactly on the symmetric CDF midpoint -> code 0
        cdf = CONST.cdf()
        idx = np.searchsorted(cdf, 0.5, side="right")
        assert idx - 32 == 0

    def test_left_tail_maps_to_most_negative(self):
        cdf = CONST.cdf()
        idx = np.searchsorted(cdf, 1e-12, side="right")
        assert idx - 32 == -32
        # most negative level sits half a bin above the -3.5 sigma edge
        assert CONST.levels_unit_sigma()[0] == pytest.approx(-3.5 + 7 / 128)

    def test_sample_variance_matches_discrete_law(self, src):
        n = 10**6
        codes = inversion_sample(src, CONST, n)
        levels = CONST.levels_unit_sigma()
        sample_var = np.var(levels[codes + 32])
        assert sample_var == pytest.approx(CONST.discrete_variance_unit_sigma(), rel=0.02)

    def test_chi_square_against_discrete_law(self, src):
        n = 10**6
        codes = inversion_sample(src.stream(7), CONST, n) + 32
        observed = np.bincount(codes, minlength=64)
        expected = CONST.probabilities() * n
        _, p = stats.chisquare(observed, expected)
        assert p > 1e-6


class TestBuildSymbols:
    def test_reproducible(self, src):
        a = build_symbols(src, CONST, 4, 20e6)
        b = build_symbols(src, CONST, 4, 20e6)
        assert np.array_equal(a.symbols, b.symbols)

    def test_iq_uncorrelated(self, src):
        n = 10**6
        frame = build_symbols(src, CONST, n, 20e6)
        rho = np.corrcoef(frame.i, frame.q)[0, 1]
        assert abs(rho) < 4 / np.sqrt(n)

    def test_mean_within_clt_bound(self, src):
        n = 10**6
        frame = build_symbols(src, CONST, n, 20e6)
        sigma = np.sqrt(CONST.target_variance)
        for x in (frame.i, frame.q):
            assert abs(x.mean()) < 4 * sigma / np.sqrt(n)

    def test_target_variance(self, src):
        frame = build_symbols(src, GaussianConstellation(target_variance=2.5), 10**5, 20e6)
        assert frame.quadrature_variance() == pytest.approx(2.5, rel=0.03)

    def test_reference_mask_fraction(self, src):
        frame = build_symbols(src, CONST, 10**4, 20e6, ref_fraction=0.01)
        assert frame.reference_mask.sum() == 100


class TestRrc:
    RRC = RrcFilter.design()

    def test_linear_phase_and_unit_energy(self):
        taps = self.RRC.taps
        assert np.allclose(taps, taps[::-1])
        assert np.sum(taps**2) == pytest.approx(1.0, abs=1e-12)

    def test_cascade_isi_below_minus_40db(self):
        cas = np.convolve(self.RRC.taps, self.RRC.taps)
        center = len(cas) // 2
        symbol_taps = cas[center % self.RRC.samples_per_symbol :: self.RRC.samples_per_symbol]
        k0 = np.argmax(np.abs(symbol_taps))
        isi = np.sum(symbol_taps**2) - symbol_taps[k0] ** 2
        assert 10 * np.log10(isi / symbol_taps[k0] ** 2) < -40

    def test_impulse(self):
        frame = SymbolFrame([1.0 + 0j], 20e6)
        buf = upsample_shape(frame, self.RRC)
        assert np.allclose(buf.samples.real, self.RRC.taps)

    def test_zero_frame(self):
        frame = SymbolFrame(np.zeros(8, complex), 20e6)
        buf = upsample_shape(frame, self.RRC)
        assert np.all(buf.samples == 0)

    def test_two_symbols_superpose(self):
        sps = self.RRC.samples_per_symbol
        frame = SymbolFrame([1.0 + 0j, 1.0 + 0j], 20e6)
        buf = upsample_shape(frame, self.RRC)
        direct = np.zeros(len(self.RRC.taps) + sps)
        direct[: len(self.RRC.taps)] += self.RRC.taps
        direct[sps:] += self.RRC.taps
        assert np.allclose(buf.samples.real, direct)

    def test_occupied_bandwidth(self, src):
        frame = build_symbols(src, CONST, 4000, 20e6)
        buf = upsample_shape(frame, self.RRC)
        f, psd = sg.welch(buf.samples, fs=buf.rate, nperseg=4096, return_onesided=False)
        in_band = np.abs(f) <= 12.2e6
        out_band = np.abs(f) > 13e6
        ratio = np.max(psd[out_band]) / np.max(psd[in_band])
        assert 10 * np.log10(ratio) < -40


class TestHighpass:
    SPEC = HighPassSpec(order=5, cutoff_hz=190e3, rate=1e9)

    def test_dc_rejection(self):
        n = 300_000
        buf = SampleBuffer(np.ones(n), 1e9)
        out = highpass(buf, self.SPEC)
        settle = len(self.SPEC.fir_taps()) // 2
        assert np.max(np.abs(out.samples[settle:-settle])) < 1e-3

    @pytest.mark.parametrize("order", [1, 3, 5])
    def test_cutoff_is_minus_3db(self, order):
        spec = HighPassSpec(order=order, cutoff_hz=190e3, rate=1e9)
        assert self._tone_gain_db(spec, 190e3) == pytest.approx(-3.0103, abs=0.2)

    def test_passband_transparent(self):
        assert self._tone_gain_db(self.SPEC, 100e6) == pytest.approx(0.0, abs=0.1)

    @pytest.mark.parametrize("freq", [100e3, 190e3, 400e3, 2e6, 50e6])
    def test_matches_analytic_butterworth(self, freq):
        gain = self._tone_gain_db(self.SPEC, freq)
        expected = 20 * np.log10(self.SPEC.analytic_magnitude(freq))
        assert gain == pytest.approx(expected, abs=0.2)

    def test_applies_to_both_quadratures(self):
        n = 200_000
        t = np.arange(n) / 1e9
        z = np.exp(2j * np.pi * 5e6 * t)
        out = highpass(SampleBuffer(z, 1e9), self.SPEC)
        assert out.is_complex()
        mid = slice(n // 4, 3 * n // 4)
        assert np.mean(np.abs(out.samples[mid]) ** 2) == pytest.approx(1.0, rel=0.01)

    def test_rejects_rate_mismatch(self):
        with pytest.raises(ValueError):
            highpass(SampleBuffer(np.ones(10), 2e9), self.SPEC)

    def test_rejects_bad_cutoff(self):
        with pytest.raises(ValueError):
            HighPassSpec(order=5, cutoff_hz=6e8, rate=1e9)

    @staticmethod
    def _tone_gain_db(spec, freq):
        n = 2_000_000
        t = np.arange(n) / spec.rate
        x = np.cos(2 * np.pi * freq * t)
        y = highpass(SampleBuffer(x, spec.rate), spec).samples
        settle = len(spec.fir_taps()) // 2
        sl = slice(settle, n - settle)
        return 10 * np.log10(np.mean(y[sl] ** 2) / np.mean(x[sl] ** 2))


class TestPilot:
    def test_zero_buffer_pure_tone(self):
        n = 2**16
        buf = SampleBuffer(np.zeros(n, complex), 1e9, meta={"quantum_band": (-12e6, 12e6)})
        out = add_pilot(buf, PilotSpec(60e6, 10.0), amplitude=0.25)
        assert np.mean(np.abs(out.samples) ** 2) == pytest.approx(0.25**2, rel=1e-6)

    def test_band_powers(self, src):
        from cvqkdsim.optics import band_power

        frame = build_symbols(src, CONST, 20000, 20e6)
        buf = upsample_shape(frame, RrcFilter.design())
        spec = PilotSpec(60e6, 10.0)
        out = add_pilot(buf, spec)
        amp = out.meta["pilot_amplitude"]
        before = band_power(buf, (59e6, 61e6))
        after = band_power(out, (59e6, 61e6))
        assert after - before == pytest.approx(amp**2, rel=0.01)
        q_before = band_power(buf, (-12e6, 12e6))
        q_after = band_power(out, (-12e6, 12e6))
        assert q_after == pytest.approx(q_before, rel=1e-3)

    def test_pilot_in_band_rejected(self):
        buf = SampleBuffer(np.zeros(100, complex), 1e9, meta={"quantum_band": (-12e6, 12e6)})
        with pytest.raises(ValueError):
            add_pilot(buf, PilotSpec(5e6, 10.0), amplitude=1.0)


class TestDac:
    def test_full_scale_sine_sqnr(self):
        n = 2**18
        t = np.arange(n)
        # one LSB below full scale so the positive peak stays on the grid
        x = (1 - 2**-14) * np.sin(2 * np.pi * t * 12289 / n)
        buf = SampleBuffer(x + 0j, 1e9)
        re, _ = quantize_dac(buf, 16, full_scale=1.0)
        err = re.samples - x
        sqnr = 10 * np.log10(np.mean(x**2) / np.mean(err**2))
        assert sqnr == pytest.approx(6.02 * 16 + 1.76, abs=1.0)

    def test_grid_passthrough(self):
        delta = 1.0 / 2**7
        codes = np.array([-128, -1, 0, 1, 100, 127])
        x = codes * delta
        buf = SampleBuffer(x + 0j, 1e9)
        re, _ = quantize_dac(buf, 8, full_scale=1.0)
        assert np.array_equal(re.samples, x)

    def test_constant_zero(self):
        buf = SampleBuffer(np.zeros(64, complex), 1e9)
        re, im = quantize_dac(buf, 2)
        assert np.all(re.samples == 0) and np.all(im.samples == 0)

    def test_clipping_reported(self):
        x = np.ones(1000) * 2.0
        buf = SampleBuffer(x + 0j, 1e9)
        with pytest.warns(UserWarning, match="clipping"):
            re, _ = quantize_dac(buf, 8, full_scale=1.0)
        assert re.meta["clip_fraction"] == 1.0

    def test_rejects_single_bit(self):
        with pytest.raises(ValueError):
            quantize_dac(SampleBuffer(np.zeros(4, complex), 1e9), 1)
