"""Image formation: PSF convolution, linear camera response, Gaussian noise.

Images are ``(H, W, 3)`` float arrays in [0, 1]; videos are ``(T, H, W, 3)``.
Convolution is circular, computed in the frequency domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .optics import PsfStack


@dataclass(frozen=True)
class SensorConfig:
    noise_sigma: float = 0.01
    response_gain: float = 1.0
    response_offset: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def noise_rng(seed: int, *stream) -> np.random.Generator:
    """Independent generator for one frame, keyed by ``(seed, *stream)``."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


def _kernels(psf) -> np.ndarray:
    return psf.kernels if isinstance(psf, PsfStack) else np.asarray(psf, dtype=float)


def _is_delta(k: np.ndarray) -> bool:
    c = k.shape[-1] // 2
    return bool(np.all(k[:, c, c] == 1.0) and np.count_nonzero(k) == k.shape[0])


def convolve(image, psf) -> np.ndarray:
    """Per-channel circular convolution of ``(..., H, W, 3)`` data with the PSF."""
    x = np.asarray(image, dtype=float)
    k = _kernels(psf)
    if x.shape[-1] != 3:
        raise ValueError(f"expected 3 colour channels, got shape {x.shape}")
    if k.shape[-1] > x.shape[-3] or k.shape[-1] > x.shape[-2]:
        raise ValueError(f"kernel {k.shape[-1]}x{k.shape[-1]} larger than image {x.shape[-3]}x{x.shape[-2]}")
    if _is_delta(k):
        return x.copy()
    flat = x.reshape((-1,) + x.shape[-3:])
    return ad.conv_fft(flat, k).value.reshape(x.shape)


def respond(blurred, cfg: SensorConfig, noise=None):
    """``clamp(gain * blurred + offset + noise, 0, 1)`` on Tensors or arrays."""
    y = ad.add(ad.mul(blurred, cfg.response_gain), cfg.response_offset)
    if noise is not None:
        y = ad.add(y, noise)
    return ad.clamp(y, 0.0, 1.0)


def draw_noise(shape, cfg: SensorConfig, *stream) -> np.ndarray | None:
    """Noise for a ``(T, H, W, C)`` clip with one substream per frame."""
    if cfg.noise_sigma == 0:
        return None
    t = shape[0]
    return np.stack([noise_rng(cfg.rng_seed, *stream, i).normal(0.0, cfg.noise_sigma, shape[1:]) for i in range(t)])


def acquire(image, psf, cfg: SensorConfig) -> np.ndarray:
    """Private image ``clamp(G(H * X) + eta)`` for one frame."""
    x = np.asarray(image, dtype=float)
    return acquire_video(x[None], psf, cfg)[0]


def acquire_video(video, psf, cfg: SensorConfig, stream=()) -> np.ndarray:
    """Acquire every frame; frame ``t`` draws noise from substream ``(seed, *stream, t)``."""
    v = np.asarray(video, dtype=float)
    if v.ndim != 4:
        raise ValueError(f"expected a (T, H, W, 3) video, got {v.shape}")
    noise = draw_noise(v.shape, cfg, *stream)
    return respond(convolve(v, psf), cfg, noise).value


def acquire_tensor(frames, kernels, cfg: SensorConfig, noise=None):
    """Differentiable acquisition of ``(N, H, W, 3)`` frames with a kernel Tensor."""
    return respond(ad.conv_fft(frames, kernels), cfg, noise)
