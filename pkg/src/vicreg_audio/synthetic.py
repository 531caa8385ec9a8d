"""Synthetic tonal corpora for desk-scale experiments and tests.

Four call types, each with a random fundamental, onset and level:

* ``steady``    - harmonic stack at a fixed pitch
* ``upsweep``   - rising frequency glide
* ``downsweep`` - falling frequency glide
* ``trill``     - rapidly pulsed tone
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav

CLASSES = ("steady", "upsweep", "downsweep", "trill")


def _envelope(n, sr, rng):
    """Call envelope: one burst covering 80-100% of the clip with 20 ms raised-cosine edges."""
    env = np.zeros(n)
    length = min(int(rng.uniform(0.8, 1.0) * n), n)
    start = int(rng.integers(0, n - length + 1))
    ramp = min(int(0.02 * sr), length // 2)
    body = np.ones(length)
    edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    body[:ramp] = edge
    body[length - ramp:] = edge[::-1]
    env[start:start + length] = body
    return env


def tone_call(kind: str, rng: np.random.Generator, sr: int = 32000, duration_s: float = 1.0) -> np.ndarray:
    """One synthetic call of type ``kind``: a harmonic stack whose pitch track depends on the type."""
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    f0 = rng.uniform(1000.0, 2500.0)
    if kind in ("steady", "trill"):
        inst = np.full(n, f0)
    elif kind in ("upsweep", "downsweep"):
        span = rng.uniform(0.5, 0.9) * f0
        # the glide repeats every 0.1-0.2 s so any crop sees several of them
        period = rng.uniform(0.1, 0.2)
        ramp = (t / period + rng.uniform()) % 1.0
        if kind == "downsweep":
            ramp = 1.0 - ramp
        inst = f0 + span * (ramp - 0.5)
    else:
        raise ValueError(f"unknown call type {kind!r}")
    phase = 2 * np.pi * np.cumsum(inst) / sr
    wave = np.zeros(n)
    for h in range(1, 7):
        # drop harmonics that would alias at the top of the glide
        if h * inst.max() < 0.45 * sr:
            wave += np.sin(h * phase) / h
    env = _envelope(n, sr, rng)
    if kind == "trill":
        rate = rng.uniform(12.0, 20.0)
        env = env * (np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi)) > 0.0)
    level = rng.uniform(0.3, 0.8)
    wave = level * wave * env / np.max(np.abs(wave))
    return wave + 0.003 * rng.standard_normal(n)


def make_tone_dataset(n_per_class: int, seed: int = 0, sr: int = 32000,
                      duration_s: float = 1.0) -> tuple[list[AudioClip], np.ndarray]:
    """Balanced list of clips and integer labels (index into ``CLASSES``)."""
    rng = np.random.default_rng(seed)
    clips, labels = [], []
    for i in range(n_per_class):
        for label, kind in enumerate(CLASSES):
            clips.append(AudioClip(tone_call(kind, rng, sr, duration_s), sr))
            labels.append(label)
    return clips, np.asarray(labels)


def make_noise_clips(count: int, seed: int = 0, sr: int = 32000, duration_s: float = 2.0) -> list[AudioClip]:
    """Coloured background noises (white, brown-ish and band-limited hum)."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    out = []
    for i in range(count):
        white = rng.standard_normal(n)
        if i % 3 == 0:
            x = white
        elif i % 3 == 1:
            x = np.cumsum(white)
            x -= np.convolve(x, np.ones(400) / 400, mode="same")
        else:
            t = np.arange(n) / sr
            x = np.sin(2 * np.pi * rng.uniform(80, 400) * t) + 0.3 * white
        out.append(AudioClip(0.1 * x / np.std(x), sr))
    return out


def write_corpus(directory, clips, labels, class_names=CLASSES) -> Path:
    """Write clips as 16-bit WAVs plus ``manifest.jsonl``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = directory / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8", newline="\n") as fh:
        for i, (clip, label) in enumerate(zip(clips, labels)):
            name = f"clip_{i:05d}.wav"
            write_wav(directory / name, clip)
            fh.write(json.dumps({"path": name, "label": class_names[int(label)],
                                 "duration_s": clip.duration_s, "sample_rate": clip.sample_rate}) + "\n")
    return manifest
