"""Seeded synthetic footage: a smoothed-noise texture panned sideways frame by frame."""

from __future__ import annotations

import numpy as np

from .imaging import FrameSequence, Image


def smooth_noise_texture(width=512, height=128, sigma=3.0, seed=0) -> np.ndarray:
    """Periodic Gaussian-smoothed white noise stretched to the full 0..255 range."""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((height, width))
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    kernel = np.exp(-2 * (np.pi * sigma) ** 2 * (fx**2 + fy**2))
    smooth = np.real(np.fft.ifft2(np.fft.fft2(noise) * kernel))
    smooth -= smooth.min()
    smooth *= 255.0 / smooth.max()
    return np.floor(smooth + 0.5).astype(np.uint8)


def panning_sequence(n_frames=480, width=512, height=128, shift=2, sigma=3.0, seed=0, fps=240.0) -> FrameSequence:
    """Frame ``i`` is the texture rolled left by ``i * shift`` pixels (wrapping)."""
    tex = smooth_noise_texture(width, height, sigma, seed)
    frames = tuple(Image(np.roll(tex, -i * shift, axis=1)) for i in range(n_frames))
    return FrameSequence(frames, fps, f"panning-seed{seed}")
