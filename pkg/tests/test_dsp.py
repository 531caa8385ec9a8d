import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vicreg_audio.audio import AudioClip
from vicreg_audio.dsp import (
    ComplexSpectrogram,
    Spectrogram,
    frame_count,
    log_compress,
    mask_time_freq,
    min_max_normalize,
    mix_noise,
    noise_gain,
    pitch_shift,
    stft,
    time_stretch,
)
from vicreg_audio.rng import RandomStream

SR = 32000


def sine(freq, n=SR, sr=SR, amp=1.0):
    return AudioClip(amp * np.sin(2 * np.pi * freq * np.arange(n) / sr), sr)


def peak_hz(samples, sr=SR):
    return float(np.argmax(np.abs(np.fft.rfft(samples)))) * sr / len(samples)


def dft_magnitudes(frame):
    """Hann-windowed DFT magnitudes from the textbook sum."""
    n = len(frame)
    window = [0.5 - 0.5 * math.cos(2 * math.pi * i / n) for i in range(n)]
    x = np.array([w * v for w, v in zip(window, frame)])
    k = np.arange(n // 2 + 1)[:, None]
    angles = 2 * np.pi * k * np.arange(n)[None, :] / n
    return np.hypot(np.cos(angles) @ x, np.sin(angles) @ x)


class TestStft:
    def test_one_second_shape(self):
        spec = stft(sine(400), 800, 320)
        assert spec.shape == (401, 98)
        assert np.all(np.isfinite(spec.values))

    def test_single_frame(self):
        assert stft(AudioClip(np.ones(800), SR), 800, 320).shape == (401, 1)

    def test_too_short(self):
        with pytest.raises(ValueError):
            stft(AudioClip(np.ones(799), SR), 800, 320)

    def test_tone_lands_in_bin_ten(self):
        spec = stft(sine(400), 800, 320)
        np.testing.assert_array_equal(np.argmax(np.abs(spec.values), axis=0), np.full(98, 10))

    def test_matches_direct_dft(self, rng):
        samples = rng.normal(size=1200)
        spec = stft(AudioClip(samples, SR), 800, 320)
        for t in range(spec.shape[1]):
            want = dft_magnitudes(samples[t * 320:t * 320 + 800])
            assert int(np.argmax(want)) == int(np.argmax(np.abs(spec.values[:, t])))
            np.testing.assert_allclose(np.abs(spec.values[:, t]), want, rtol=1e-9, atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(64, 4000), st.integers(16, 64), st.integers(1, 15))
    def test_frame_count_formula(self, length, fft_size, hop):
        fft_size *= 2
        if length < fft_size:
            return
        spec = stft(AudioClip(np.ones(length), SR), fft_size, hop)
        assert spec.shape == (fft_size // 2 + 1, 1 + (length - fft_size) // hop)
        assert spec.shape[1] == frame_count(length, fft_size, hop)


class TestPitchShift:
    def test_zero_steps_identity(self, rng):
        clip = AudioClip(rng.normal(size=SR), SR)
        np.testing.assert_array_equal(pitch_shift(clip, 0).samples, clip.samples)

    def test_octave_up(self):
        out = pitch_shift(sine(440), 12)
        assert len(out) == SR
        assert abs(peak_hz(out.samples) - 880) <= 1.0

    def test_four_steps_down(self):
        out = pitch_shift(sine(1000), -4)
        assert abs(peak_hz(out.samples) - 1000 * 2 ** (-4 / 12)) <= 1.0

    @settings(max_examples=18, deadline=None)
    @given(st.integers(-4, 4), st.integers(900, 4000))
    def test_length_preserved(self, steps, n):
        assert len(pitch_shift(AudioClip(np.random.default_rng(n).normal(size=n), SR), steps)) == n


class TestMixNoise:
    def test_gain_examples(self):
        assert noise_gain(2.0, 2.0, 0) == pytest.approx(1.0, rel=1e-15)
        assert noise_gain(2.0, 2.0, 20) == pytest.approx(0.1, rel=1e-15)

    def test_measured_snr(self, rng):
        signal = sine(1000, amp=math.sqrt(2))  # unit power
        noise = rng.normal(size=SR)
        noise /= math.sqrt(np.mean(noise ** 2))
        mixed = mix_noise(signal, AudioClip(noise, SR), 10)
        added = mixed.samples - signal.samples
        measured = 10 * math.log10(math.fsum(signal.samples ** 2) / math.fsum(added ** 2))
        assert abs(measured - 10) <= 0.01

    def test_silent_noise_returns_signal(self, rng):
        signal = AudioClip(rng.normal(size=100), SR)
        out = mix_noise(signal, AudioClip(np.zeros(100), SR), 5)
        np.testing.assert_array_equal(out.samples, signal.samples)

    def test_rate_mismatch(self):
        with pytest.raises(ValueError):
            mix_noise(AudioClip(np.ones(10), SR), AudioClip(np.ones(10), 16000), 5)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 20))
    def test_preserves_length_and_rate(self, n, snr):
        rng = np.random.default_rng(n)
        out = mix_noise(AudioClip(rng.normal(size=n), 16000), AudioClip(rng.normal(size=n), 16000), snr)
        assert len(out) == n and out.sample_rate == 16000


class TestTimeStretch:
    def _random_spec(self):
        rng = np.random.default_rng(42)
        values = rng.normal(size=(401, 98)) + 1j * rng.normal(size=(401, 98))
        return ComplexSpectrogram(values, 800, 320, SR)

    def test_unit_rate_identity(self):
        spec = self._random_spec()
        np.testing.assert_array_equal(time_stretch(spec, 1.0).values, spec.values)

    def test_frame_counts(self):
        spec = self._random_spec()
        assert time_stretch(spec, 1.1).shape == (401, 108)
        assert time_stretch(spec, 0.9).shape == (401, 88)

    def test_shrink_energy(self):
        spec = self._random_spec()
        out = time_stretch(spec, 0.9)
        ratio = np.abs(out.values).sum() / (0.9 * np.abs(spec.values).sum())
        assert abs(ratio - 1.0) <= 0.05

    def test_tone_frequency_kept(self):
        spec = stft(sine(400), 800, 320)
        for rate in (0.9, 1.1):
            out = time_stretch(spec, rate)
            np.testing.assert_array_equal(np.argmax(np.abs(out.values), axis=0), 10)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            time_stretch(self._random_spec(), 0.0)


class TestLogAndNormalize:
    def test_log_values(self):
        spec = ComplexSpectrogram(np.array([[1.0, 10.0j, 0.0]]), 2, 1, SR)
        out = log_compress(spec)
        np.testing.assert_allclose(out.values, [[0.0, 20.0, -200.0]], atol=1e-12)
        assert out.scale == "decibel"

    def test_normalize_example(self):
        out = min_max_normalize(Spectrogram(np.array([[0.0, 5.0], [10.0, 5.0]]), "decibel"))
        np.testing.assert_array_equal(out.values, [[0.0, 0.5], [1.0, 0.5]])
        assert out.scale == "normalized"

    def test_constant_maps_to_zero(self):
        out = min_max_normalize(Spectrogram(np.full((3, 4), -7.0), "decibel"))
        np.testing.assert_array_equal(out.values, np.zeros((3, 4)))

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-300, 300), min_size=2, max_size=40))
    def test_exact_unit_range(self, values):
        v = np.array(values)
        if v.min() == v.max():
            return
        out = min_max_normalize(Spectrogram(v.reshape(1, -1), "decibel")).values
        assert out.min() == 0.0 and out.max() == 1.0


class TestMasks:
    def _spec(self):
        return Spectrogram(np.random.default_rng(0).uniform(0.1, 1.0, size=(401, 98)), "normalized")

    def test_zero_width_is_identity(self):
        spec = self._spec()
        np.testing.assert_array_equal(mask_time_freq(spec, 0, 0, RandomStream(1)).values, spec.values)

    def test_masked_cells_zero_others_unchanged(self):
        spec = self._spec()
        for seed in range(20):
            out = mask_time_freq(spec, 8, 16, RandomStream(seed)).values
            zero = out == 0.0
            np.testing.assert_array_equal(out[~zero], spec.values[~zero])
            cols = np.flatnonzero(zero.all(axis=0))
            rows = np.flatnonzero(zero.all(axis=1))
            assert len(cols) <= 8 and len(rows) <= 16
            # every zero cell lies in a fully masked row or column
            assert np.all(zero == (zero.all(axis=0)[None, :] | zero.all(axis=1)[:, None]))
            for band in (cols, rows):
                if len(band):
                    np.testing.assert_array_equal(band, np.arange(band[0], band[0] + len(band)))

    def test_deterministic(self):
        spec = self._spec()
        a = mask_time_freq(spec, 8, 16, RandomStream(4, (1, 2, 3)))
        b = mask_time_freq(spec, 8, 16, RandomStream(4, (1, 2, 3)))
        np.testing.assert_array_equal(a.values, b.values)

    def test_requires_normalized(self):
        with pytest.raises(ValueError):
            mask_time_freq(Spectrogram(np.zeros((3, 3)), "decibel"), 1, 1, RandomStream(0))
