"""A privacy camera: Zernike coefficients, optics and sensor bundled together."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .optics import OpticsConfig, PsfStack, mask_tensor, psf_stack_tensor
from .sensor import SensorConfig, acquire_tensor, acquire_video
from .zernike import ZernikeBasis, build_basis

_BASES: dict = {}


def basis_for(optics: OpticsConfig, q: int) -> ZernikeBasis:
    """Zernike basis for a grid, cached because building it is the slow part."""
    key = (optics.grid, q)
    if key not in _BASES:
        _BASES[key] = build_basis(optics.grid, q)
    return _BASES[key]


@dataclass
class Camera:
    alpha: np.ndarray
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).copy()
        if self.alpha.ndim != 1 or not np.all(np.isfinite(self.alpha)):
            raise ValueError("alpha must be a finite 1-D coefficient vector")

    @property
    def q(self) -> int:
        return self.alpha.size

    @property
    def basis(self) -> ZernikeBasis:
        return basis_for(self.optics, self.q)

    @cached_property
    def psf(self) -> PsfStack:
        return PsfStack(self.psf_tensor(self.alpha).value)

    def psf_tensor(self, alpha):
        """Differentiable PSF stack for coefficients ``alpha`` on this camera."""
        return psf_stack_tensor(mask_tensor(alpha, self.basis), self.optics)

    def capture(self, videos, stream=(), ids=None) -> np.ndarray:
        """Private versions of ``(N, T, H, W, 3)`` clips.

        Clip ``i`` draws its noise from substream ``(*stream, ids[i])`` so a
        clip is captured identically whatever batch it appears in.
        """
        v = np.asarray(videos, dtype=float)
        ids = range(len(v)) if ids is None else ids
        return np.stack([acquire_video(x, self.psf, self.sensor, (*stream, int(i))) for x, i in zip(v, ids)])

    def capture_tensor(self, alpha, videos, noise=None):
        """Differentiable capture of ``(B, T, H, W, 3)`` clips as a function of ``alpha``."""
        v = np.asarray(videos, dtype=float)
        b, t = v.shape[:2]
        frames = v.reshape((b * t,) + v.shape[2:])
        if noise is not None:
            noise = noise.reshape(frames.shape)
        y = acquire_tensor(frames, self.psf_tensor(alpha), self.sensor, noise)
        return ad.reshape(y, v.shape)

    def with_alpha(self, alpha) -> "Camera":
        return Camera(alpha, self.optics, self.sensor)
