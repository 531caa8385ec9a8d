"""Pure-numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` one for one and are used whenever the compiled
extension is unavailable (or ``VICREG_AUDIO_PURE_PYTHON=1`` is set).
"""

import functools

import numpy as np

KERNEL = 3


def conv_output_size(size, stride, pad=1):
    return (size + 2 * pad - KERNEL) // stride + 1


def im2col(x, stride, pad=1):
    """Unfold 3x3 patches of ``x`` (N, C, H, W) into (N, C, 3, 3, Ho, Wo)."""
    n, c, h, w = x.shape
    ho = conv_output_size(h, stride, pad)
    wo = conv_output_size(w, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, KERNEL, KERNEL, ho, wo), dtype=x.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols


def col2im(cols, h, w, stride, pad=1):
    """Adjoint of :func:`im2col`: scatter-add patches back to (N, C, H, W)."""
    n, c, _, _, ho, wo = cols.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += cols[:, :, i, j]
    return xp[:, :, pad:pad + h, pad:pad + w].copy()


def phase_vocoder(spec, positions, hop, n_fft):
    """Resample complex STFT frames at fractional ``positions``.

    Magnitudes are linearly interpolated between neighbouring frames, phases
    are accumulated from the per-bin instantaneous frequency.
    """
    spec = np.asarray(spec, dtype=np.complex128)
    n_bins, n_frames = spec.shape
    positions = np.asarray(positions, dtype=np.float64)
    out = np.empty((n_bins, len(positions)), dtype=np.complex128)
    expected = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    mag = np.abs(spec)
    ang = np.angle(spec)
    phase = ang[:, 0].copy()
    for j, t in enumerate(positions):
        i0 = int(np.floor(t))
        frac = t - i0
        i1 = min(i0 + 1, n_frames - 1)
        m = (1.0 - frac) * mag[:, i0] + frac * mag[:, i1]
        out[:, j] = m * np.exp(1j * phase)
        if i1 == i0:
            phase += expected
        else:
            dphi = ang[:, i1] - ang[:, i0] - expected
            dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
            phase += expected + dphi
    return out


TABLE_DENSITY = 512


@functools.lru_cache(maxsize=8)
def kaiser_table(half_taps=32, beta=8.6):
    """Kaiser window sampled at ``TABLE_DENSITY`` points per tap on [0, half_taps]."""
    u = np.arange(half_taps * TABLE_DENSITY + 1) / (half_taps * TABLE_DENSITY)
    table = np.i0(beta * np.sqrt(np.clip(1.0 - u * u, 0.0, None))) / np.i0(beta)
    table.setflags(write=False)
    return table


def _kaiser_lookup(d, half_taps, beta):
    table = kaiser_table(half_taps, beta)
    u = np.abs(d) * TABLE_DENSITY
    idx = np.minimum(u.astype(np.int64), len(table) - 1)
    nxt = np.minimum(idx + 1, len(table) - 1)
    frac = u - idx
    return np.where(idx >= len(table) - 1, table[-1], (1.0 - frac) * table[idx] + frac * table[nxt])


def sinc_resample(x, ratio, out_len, half_taps=32, beta=8.6, chunk=8192):
    """Kaiser-windowed sinc interpolation at ``out_len`` points spaced ``1/ratio``."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    cutoff = min(1.0, ratio)
    out = np.empty(out_len, dtype=np.float64)
    offsets = np.arange(-half_taps + 1, half_taps + 1)
    for start in range(0, out_len, chunk):
        m = np.arange(start, min(start + chunk, out_len))
        t = m / ratio
        centre = np.floor(t).astype(np.int64)
        k = centre[:, None] + offsets[None, :]
        d = t[:, None] - k
        h = cutoff * np.sinc(cutoff * d) * _kaiser_lookup(d, half_taps, beta)
        valid = (k >= 0) & (k < n)
        samples = x[np.clip(k, 0, n - 1)]
        out[m] = np.sum(np.where(valid, h * samples, 0.0), axis=1)
    return out
