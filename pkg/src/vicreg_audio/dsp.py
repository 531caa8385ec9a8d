"""Spectral transforms and waveform/spectrogram augmentation stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .audio import AudioClip, fit_length, resample_samples
from .rng import as_generator

LOG_FLOOR = 1e-10

# waveform phase-vocoder settings used by pitch shifting (75% overlap)
_PV_FFT = 800
_PV_HOP = 200


@dataclass(frozen=True)
class ComplexSpectrogram:
    values: np.ndarray  # (F, T) complex
    fft_size: int
    hop: int
    sample_rate: int

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class Spectrogram:
    values: np.ndarray  # (F, T) real
    scale: str  # "decibel" | "normalized"

    @property
    def shape(self):
        return self.values.shape


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_count(length: int, fft_size: int, hop: int) -> int:
    return 1 + (length - fft_size) // hop


def _stft_matrix(samples: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    frames = sliding_window_view(samples, fft_size)[::hop]
    return np.fft.rfft(frames * hann(fft_size), axis=1).T


def stft(clip: AudioClip, fft_size: int = 800, hop: int = 320) -> ComplexSpectrogram:
    """Hann-windowed STFT without centering: ``1 + (L - fft) // hop`` frames."""
    if fft_size <= 0 or hop <= 0:
        raise ValueError("fft_size and hop must be positive")
    if len(clip) < fft_size:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one {fft_size}-point frame")
    return ComplexSpectrogram(_stft_matrix(clip.samples, fft_size, hop), fft_size, hop, clip.sample_rate)


def _istft_matrix(values: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    frames = np.fft.irfft(values.T, n=fft_size, axis=1)
    window = hann(fft_size)
    n_frames = frames.shape[0]
    length = (n_frames - 1) * hop + fft_size
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        out[t * hop:t * hop + fft_size] += frames[t] * window
        norm[t * hop:t * hop + fft_size] += window ** 2
    return out / np.where(norm > 1e-8, norm, 1.0)


def stretched_frame_count(n_frames: int, rate: float) -> int:
    return max(1, int(np.floor(n_frames * rate + 0.5)))


def _stretch_values(values: np.ndarray, rate: float, hop: int, fft_size: int) -> np.ndarray:
    n_frames = values.shape[1]
    n_out = stretched_frame_count(n_frames, rate)
    positions = np.arange(n_out) * (n_frames / n_out)
    return kernels.phase_vocoder(values, positions, hop, fft_size)


def time_stretch(spec: ComplexSpectrogram, rate: float) -> ComplexSpectrogram:
    """Phase-vocoder stretch of the time axis to ``round(T * rate)`` frames.

    Magnitudes are interpolated linearly between neighbouring frames and each
    bin's phase is advanced by its measured instantaneous frequency, so pitch
    is unchanged. ``rate > 1`` lengthens.
    """
    if rate <= 0:
        raise ValueError(f"stretch rate must be positive, got {rate}")
    if rate == 1.0:
        return ComplexSpectrogram(spec.values.copy(), spec.fft_size, spec.hop, spec.sample_rate)
    values = _stretch_values(spec.values, rate, spec.hop, spec.fft_size)
    return ComplexSpectrogram(values, spec.fft_size, spec.hop, spec.sample_rate)


def stretch_waveform(samples: np.ndarray, factor: float, length: int) -> np.ndarray:
    """Lengthen ``samples`` by ``factor`` at constant pitch, then fit to ``length``."""
    padded = np.pad(samples, _PV_FFT)
    values = _stft_matrix(padded, _PV_FFT, _PV_HOP)
    stretched = _stretch_values(values, factor, _PV_HOP, _PV_FFT)
    out = _istft_matrix(stretched, _PV_FFT, _PV_HOP)
    # the leading pad is stretched along with the signal
    start = int(round(_PV_FFT * stretched.shape[1] / values.shape[1]))
    return fit_length(out, length, start=start)


def pitch_shift(clip: AudioClip, steps: int) -> AudioClip:
    """Shift pitch by ``steps`` semitones keeping the clip length.

    The waveform is resampled by ``2 ** (-steps / 12)`` (changing pitch and
    duration together) and then time-stretched back to its original length.
    """
    if steps == 0:
        return clip
    ratio = 2.0 ** (-steps / 12.0)
    n = len(clip)
    shifted = resample_samples(clip.samples, ratio, max(1, int(round(n * ratio))))
    return AudioClip(stretch_waveform(shifted, n / len(shifted), n), clip.sample_rate)


def mean_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def noise_gain(signal_power: float, noise_power: float, snr_db: float) -> float:
    if noise_power == 0.0:
        return 0.0
    return float(np.sqrt(signal_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_noise(signal: AudioClip, noise: AudioClip, snr_db: float) -> AudioClip:
    """Add ``noise`` scaled so the signal-to-noise power ratio is ``snr_db`` dB."""
    if signal.sample_rate != noise.sample_rate:
        raise ValueError(f"sample rate mismatch: signal {signal.sample_rate}, noise {noise.sample_rate}")
    if len(noise) != len(signal):
        raise ValueError(f"noise length {len(noise)} differs from signal length {len(signal)}")
    g = noise_gain(mean_power(signal.samples), mean_power(noise.samples), snr_db)
    if g == 0.0:
        return signal
    return AudioClip(signal.samples + g * noise.samples, signal.sample_rate)


def log_compress(spec: ComplexSpectrogram) -> Spectrogram:
    mag = np.maximum(np.abs(spec.values), LOG_FLOOR)
    return Spectrogram(20.0 * np.log10(mag), "decibel")


def min_max_normalize(spec: Spectrogram) -> Spectrogram:
    """Rescale one spectrogram to [0, 1]; a constant input maps to zeros."""
    v = spec.values
    lo, hi = v.min(), v.max()
    if hi == lo:
        return Spectrogram(np.zeros_like(v), "normalized")
    return Spectrogram((v - lo) / (hi - lo), "normalized")


def draw_masks(shape, max_time: int, max_freq: int, rng) -> dict:
    """Draw one time mask and one frequency mask as ``(start, width)`` pairs."""
    gen = as_generator(rng)
    n_freq, n_time = shape
    wt = int(gen.integers(0, min(max_time, n_time) + 1))
    t0 = int(gen.integers(0, n_time - wt + 1))
    wf = int(gen.integers(0, min(max_freq, n_freq) + 1))
    f0 = int(gen.integers(0, n_freq - wf + 1))
    return {"time_start": t0, "time_width": wt, "freq_start": f0, "freq_width": wf}


def apply_masks(spec: Spectrogram, masks: dict) -> Spectrogram:
    v = spec.values.copy()
    v[:, masks["time_start"]:masks["time_start"] + masks["time_width"]] = 0.0
    v[masks["freq_start"]:masks["freq_start"] + masks["freq_width"], :] = 0.0
    return Spectrogram(v, spec.scale)


def mask_time_freq(spec: Spectrogram, max_time: int, max_freq: int, rng) -> Spectrogram:
    """Zero one random band of frames and one random band of bins."""
    if spec.scale != "normalized":
        raise ValueError("masking expects a normalized spectrogram")
    return apply_masks(spec, draw_masks(spec.shape, max_time, max_freq, rng))
