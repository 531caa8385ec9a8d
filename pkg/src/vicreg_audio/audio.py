"""Waveform containers, WAV decoding, resampling and cropping."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .rng import as_generator

RESAMPLE_HALF_TAPS = 32  # 64 taps per output phase
RESAMPLE_BETA = 8.6


class AudioFormatError(ValueError):
    """Base class for WAV decoding failures."""


class UnsupportedEncodingError(AudioFormatError):
    pass


class TruncatedFileError(AudioFormatError):
    pass


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValueError("AudioClip needs a non-empty 1-d sample array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("AudioClip samples must be finite")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate


_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def load_wav(path) -> AudioClip:
    """Decode a RIFF/WAVE file holding 16-bit integer or 32-bit float PCM.

    Channels are averaged to mono; 16-bit samples are divided by 32768.
    Raises ``FileNotFoundError``, :class:`UnsupportedEncodingError` or
    :class:`TruncatedFileError`.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: shorter than a RIFF header")
    if data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise UnsupportedEncodingError(f"{path}: not a RIFF/WAVE container")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise TruncatedFileError(f"{path}: chunk {chunk_id!r} cut short")
        if chunk_id == b"fmt ":
            if size < 16:
                raise TruncatedFileError(f"{path}: fmt chunk too small")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and size >= 26:
                (sub,) = struct.unpack("<H", body[24:26])
                fmt = (sub,) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise TruncatedFileError(f"{path}: missing fmt chunk")
    if payload is None:
        raise TruncatedFileError(f"{path}: missing data chunk")
    tag, channels, rate, _, block_align, bits = fmt
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag} with {bits}-bit samples is not supported")
    if channels < 1:
        raise UnsupportedEncodingError(f"{path}: zero channels")
    frame_bytes = channels * dtype.itemsize
    n_frames = len(payload) // frame_bytes
    if n_frames == 0:
        raise TruncatedFileError(f"{path}: no complete sample frames")
    raw = np.frombuffer(payload[:n_frames * frame_bytes], dtype=dtype).reshape(n_frames, channels)
    samples = raw.astype(np.float64).mean(axis=1) * scale
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono WAV file (``pcm16`` or ``float32``)."""
    if encoding == "pcm16":
        body = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif encoding == "float32":
        body = clip.samples.astype("<f4").tobytes()
        tag, bits = _IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    block = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, clip.sample_rate, clip.sample_rate * block, block, bits)
    riff = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(body)) + body
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(riff)) + riff)


def resample_samples(samples: np.ndarray, ratio: float, out_len: int) -> np.ndarray:
    """Windowed-sinc interpolation of ``samples`` onto a grid ``ratio`` times denser."""
    return kernels.sinc_resample(np.asarray(samples, dtype=np.float64), float(ratio), int(out_len),
                                 RESAMPLE_HALF_TAPS, RESAMPLE_BETA)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    ratio = target_rate / clip.sample_rate
    out_len = max(1, int(round(len(clip) * ratio)))
    return AudioClip(resample_samples(clip.samples, ratio, out_len), target_rate)


def fit_length(samples: np.ndarray, length: int, start: int = 0) -> np.ndarray:
    """Take ``length`` samples from ``start``, right-padding with zeros."""
    out = np.zeros(length, dtype=np.float64)
    piece = samples[start:start + length]
    out[:len(piece)] = piece
    return out


def random_crop(clip: AudioClip, duration_s: float, rng) -> AudioClip:
    """Uniformly placed window of ``duration_s``; short clips are zero-padded.

    ``rng`` may be a :class:`RandomStream`, a numpy ``Generator`` or a seed.
    """
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    length = int(round(duration_s * clip.sample_rate))
    slack = len(clip) - length
    start = int(as_generator(rng).integers(0, slack + 1)) if slack > 0 else 0
    return AudioClip(fit_length(clip.samples, length, start), clip.sample_rate)


def center_crop(clip: AudioClip, duration_s: float) -> AudioClip:
    """Centered window of ``duration_s``; short clips are zero-padded on the right."""
    length = int(round(duration_s * clip.sample_rate))
    start = max(0, (len(clip) - length) // 2)
    return AudioClip(fit_length(clip.samples, length, start), clip.sample_rate)
