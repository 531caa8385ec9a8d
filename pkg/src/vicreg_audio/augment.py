"""The view-generation chain used for self-supervised pretraining.

Stages, in order: pitch shift, background noise, STFT, time stretch, log
compression, min-max normalization, time/frequency masking. Every random
choice is drawn up front from a :class:`~vicreg_audio.rng.RandomStream`, so a
view is a pure function of ``(clip, config, noise bank, seed, lane)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .audio import AudioClip, load_wav, resample
from .dsp import (
    Spectrogram,
    apply_masks,
    draw_masks,
    log_compress,
    min_max_normalize,
    mix_noise,
    pitch_shift,
    stft,
    time_stretch,
)
from .rng import RandomStream

_PITCH, _NOISE, _STRETCH, _MASK = range(4)


@dataclass(frozen=True)
class AugmentConfig:
    pitch_steps_range: tuple[int, int] = (-4, 4)
    snr_range_db: tuple[int, int] = (1, 20)
    fft_size: int = 800
    hop: int = 320
    stretch_range: tuple[float, float] = (0.9, 1.1)
    max_time_mask: int = 8
    max_freq_mask: int = 16
    target_frames: int = 98
    sample_rate: int = 32000
    clip_seconds: float = 1.0

    def __post_init__(self):
        for name in ("pitch_steps_range", "snr_range_db", "stretch_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (lo, hi))
            if lo > hi:
                raise ValueError(f"{name} must satisfy low <= high, got {(lo, hi)}")
        if self.stretch_range[0] <= 0:
            raise ValueError("stretch_range must be positive")
        if not self.fft_size > self.hop > 0:
            raise ValueError("need fft_size > hop > 0")
        if self.max_time_mask < 0 or self.max_freq_mask < 0 or self.target_frames < 1:
            raise ValueError("mask widths must be >= 0 and target_frames >= 1")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown augment keys: {sorted(unknown)}")
        obj = {k: tuple(v) if isinstance(v, list) else v for k, v in obj.items()}
        return cls(**obj)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class AugmentParams:
    """Everything drawn for one view."""

    pitch_steps: int
    noise_index: int | None
    noise_offset: int
    snr_db: int
    stretch_rate: float
    masks: dict

    def to_dict(self) -> dict:
        return asdict(self)


class NoiseBank:
    """Background recordings, resampled to the augmentation rate."""

    def __init__(self, clips, sample_rate: int = 32000):
        self.sample_rate = sample_rate
        self.clips = [resample(c, sample_rate) for c in clips]

    @classmethod
    def from_directory(cls, directory, sample_rate: int = 32000) -> "NoiseBank":
        paths = sorted(Path(directory).glob("*.wav"))
        if not paths:
            raise FileNotFoundError(f"no .wav files in noise directory {directory}")
        return cls([load_wav(p) for p in paths], sample_rate)

    def __len__(self):
        return len(self.clips)

    def segment(self, index: int, offset: int, length: int) -> AudioClip:
        """``length`` samples of clip ``index`` from ``offset``, looping as needed."""
        src = self.clips[index].samples
        idx = (offset + np.arange(length)) % len(src)
        return AudioClip(src[idx], self.sample_rate)


def draw_params(cfg: AugmentConfig, rng: RandomStream, noise_bank: NoiseBank | None = None) -> AugmentParams:
    g = rng.generator(_PITCH)
    steps = int(g.integers(cfg.pitch_steps_range[0], cfg.pitch_steps_range[1] + 1))

    g = rng.generator(_NOISE)
    snr = int(g.integers(cfg.snr_range_db[0], cfg.snr_range_db[1] + 1))
    if noise_bank is not None and len(noise_bank) > 0:
        index = int(g.integers(0, len(noise_bank)))
        offset = int(g.integers(0, len(noise_bank.clips[index])))
    else:
        index, offset = None, 0

    g = rng.generator(_STRETCH)
    rate = float(g.uniform(cfg.stretch_range[0], cfg.stretch_range[1]))

    masks = draw_masks((cfg.n_bins, cfg.target_frames), cfg.max_time_mask, cfg.max_freq_mask,
                       rng.generator(_MASK))
    return AugmentParams(steps, index, offset, snr, rate, masks)


def fix_frames(values: np.ndarray, target: int) -> np.ndarray:
    """Center-crop or right-pad (with zeros) the time axis to ``target`` frames."""
    n = values.shape[1]
    if n > target:
        start = (n - target) // 2
        return values[:, start:start + target]
    if n < target:
        pad = np.zeros((values.shape[0], target - n), dtype=values.dtype)
        return np.concatenate([values, pad], axis=1)
    return values


def apply_params(clip: AudioClip, params: AugmentParams, cfg: AugmentConfig,
                 noise_bank: NoiseBank | None = None) -> Spectrogram:
    _check_clip(clip, cfg)
    wave = pitch_shift(clip, params.pitch_steps)
    if params.noise_index is not None:
        noise = noise_bank.segment(params.noise_index, params.noise_offset, len(wave))
        wave = mix_noise(wave, noise, params.snr_db)
    spec = time_stretch(stft(wave, cfg.fft_size, cfg.hop), params.stretch_rate)
    # cropping is done on the complex frames; padding waits until after
    # normalization so padded frames sit at the normalized minimum
    values = spec.values
    if values.shape[1] > cfg.target_frames:
        values = fix_frames(values, cfg.target_frames)
    norm = min_max_normalize(log_compress(type(spec)(values, spec.fft_size, spec.hop, spec.sample_rate)))
    norm = Spectrogram(fix_frames(norm.values, cfg.target_frames), "normalized")
    return apply_masks(norm, params.masks)


def augment_view(clip: AudioClip, cfg: AugmentConfig, rng: RandomStream,
                 noise_bank: NoiseBank | None = None) -> Spectrogram:
    """One augmented ``(n_bins, target_frames)`` view of a clip.

    Without a noise bank the background-noise stage is skipped.
    """
    return apply_params(clip, draw_params(cfg, rng, noise_bank), cfg, noise_bank)


def clean_view(clip: AudioClip, cfg: AugmentConfig) -> Spectrogram:
    """STFT, log compression and normalization only (no augmentation)."""
    _check_clip(clip, cfg)
    norm = min_max_normalize(log_compress(stft(clip, cfg.fft_size, cfg.hop)))
    return Spectrogram(fix_frames(norm.values, cfg.target_frames), "normalized")


def _check_clip(clip: AudioClip, cfg: AugmentConfig) -> None:
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} sps, got {clip.sample_rate}")
    if len(clip) != cfg.clip_samples:
        raise ValueError(f"expected {cfg.clip_samples} samples, got {len(clip)}")


SPEC_MAGIC = b"SPEC1"


def write_spec(path, values: np.ndarray, params: dict | None = None) -> None:
    """Write a real matrix as ``SPEC1`` + pad + u32 F + u32 T + float32 LE data.

    With ``params`` a JSON sidecar is written next to it (``<path>.json``).
    """
    values = np.asarray(values)
    n_freq, n_time = values.shape
    header = SPEC_MAGIC + b"\x00" * 3 + struct.pack("<II", n_freq, n_time)
    Path(path).write_bytes(header + values.astype("<f4").tobytes())
    if params is not None:
        Path(str(path) + ".json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")


def read_spec(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:5] != SPEC_MAGIC:
        raise ValueError(f"{path}: not a SPEC1 file")
    n_freq, n_time = struct.unpack("<II", data[8:16])
    body = data[16:]
    if len(body) != 4 * n_freq * n_time:
        raise ValueError(f"{path}: expected {n_freq}x{n_time} values, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(n_freq, n_time).copy()
