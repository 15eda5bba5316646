"""Per-channel PSFs from a Zernike phase mask by angular-spectrum propagation.

The pupil field is ``W * t_L * t_phi`` with a unit plane wave ``W`` on the
aperture disk, the quadratic phase ``t_L = exp(-i k (u^2+v^2) / (2 z))`` and
the mask ``t_phi = exp(-i k phi)``. It is propagated over the pupil-to-sensor
distance with the free-space transfer function, squared, binned down to the
sensor pitch, centre-cropped and normalised to unit sum. When
``object_distance == propagation_distance`` the quadratic phase focuses on the
sensor, so a zero mask gives a diffraction-limited spot.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import autodiff as ad
from .zernike import PhaseMask, PupilGrid, ZernikeBasis

CHANNELS = ("R", "G", "B")
UNDERFLOW_FRACTION = 1e-3


class PsfUnderflowWarning(RuntimeWarning):
    """Most of the PSF energy falls outside the cropped kernel."""


@dataclass(frozen=True)
class OpticsConfig:
    wavelengths: tuple = (640e-9, 550e-9, 460e-9)
    object_distance: float = 0.1
    propagation_distance: float = 0.1
    aperture_diameter: float = 1.6e-3
    n_samples: int = 64
    psf_size: int = 15
    sensor_pitch: float = 100e-6

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        if len(self.wavelengths) != 3 or min(self.wavelengths) <= 0:
            raise ValueError("need three positive wavelengths (R, G, B)")
        for name in ("object_distance", "propagation_distance", "aperture_diameter", "sensor_pitch"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.psf_size < 1 or self.psf_size % 2 == 0:
            raise ValueError(f"psf_size must be odd, got {self.psf_size}")
        self.grid  # validates n_samples
        ratio = self.sensor_pitch / self.grid.pitch
        b = int(round(ratio))
        if abs(ratio - b) > 1e-6 * ratio or b < 2 or b % 2:
            raise ValueError(
                f"sensor_pitch must be an even multiple of the pupil pitch {self.grid.pitch:g} m, "
                f"got ratio {ratio:g}"
            )
        if self.psf_size * b > self.n_samples:
            raise ValueError(f"psf_size {self.psf_size} x binning {b} exceeds the {self.n_samples}-sample grid")

    @cached_property
    def grid(self) -> PupilGrid:
        return PupilGrid(self.n_samples, self.aperture_diameter)

    @property
    def binning(self) -> int:
        return int(round(self.sensor_pitch / self.grid.pitch))

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi / np.asarray(self.wavelengths)

    @cached_property
    def lens_phase(self) -> np.ndarray:
        """``-k (u^2 + v^2) / (2 z)`` per channel, shape ``(3, n, n)``."""
        u, v = self.grid.uv
        r2 = u**2 + v**2
        return -self.wavenumbers[:, None, None] * r2 / (2 * self.object_distance)

    @cached_property
    def transfer(self) -> np.ndarray:
        """Angular-spectrum transfer function, evanescent waves removed."""
        f = np.fft.fftfreq(self.n_samples, self.grid.pitch)
        fu, fv = np.meshgrid(f, f, indexing="xy")
        out = np.zeros((3, self.n_samples, self.n_samples), dtype=complex)
        for c, lam in enumerate(self.wavelengths):
            arg = 1.0 - (lam * fu) ** 2 - (lam * fv) ** 2
            prop = arg > 0
            out[c][prop] = np.exp(1j * (2 * np.pi / lam) * self.propagation_distance * np.sqrt(arg[prop]))
        return out


@dataclass(frozen=True)
class PsfStack:
    kernels: np.ndarray  # (3, P, P), each summing to one

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=float)
        if k.ndim != 3 or k.shape[0] != 3 or k.shape[1] != k.shape[2]:
            raise ValueError(f"expected (3, P, P) kernels, got {k.shape}")
        object.__setattr__(self, "kernels", k)

    @property
    def size(self) -> int:
        return self.kernels.shape[1]

    @classmethod
    def delta(cls, size: int) -> "PsfStack":
        k = np.zeros((3, size, size))
        k[:, size // 2, size // 2] = 1.0
        return cls(k)


def _check_grid(grid: PupilGrid, cfg: OpticsConfig):
    if grid != cfg.grid:
        raise ValueError("phase mask grid does not match the optics configuration")


def mask_tensor(alpha, basis: ZernikeBasis):
    """Differentiable ``phi = sum_j alpha_j Z_j`` (micrometres)."""
    n = basis.grid.n_samples
    a = ad.reshape(ad.as_tensor(alpha), (1, basis.q))
    return ad.reshape(ad.matmul(a, basis.maps.reshape(basis.q, n * n)), (n, n))


def field_tensor(phi, cfg: OpticsConfig):
    """Pupil fields for all three channels, ``(3, n, n)`` complex."""
    k = -cfg.wavenumbers[:, None, None] * 1e-6  # phi is in micrometres
    phase = ad.add(ad.mul(ad.as_tensor(phi), k), cfg.lens_phase)
    return ad.mul(ad.expi(phase), cfg.grid.disk.astype(float))


def sensor_intensity(field, cfg: OpticsConfig):
    """Propagated intensity ``|F^-1{F{field} T}|^2`` on the pupil grid."""
    return ad.abs2(ad.idft2(ad.mul(ad.dft2(field), cfg.transfer)))


def crop_bin_normalize(intensity, cfg: OpticsConfig):
    """Centre crop, bin to sensor pixels and scale each kernel to unit sum."""
    n, p, b = cfg.n_samples, cfg.psf_size, cfg.binning
    lo = n // 2 - p * b // 2
    window = intensity[:, lo : lo + p * b, lo : lo + p * b]
    binned = ad.sum(ad.reshape(window, (3, p, b, p, b)), axis=(2, 4))
    return ad.div(binned, ad.sum(binned, axis=(1, 2), keepdims=True))


def _underflow_check(intensity: np.ndarray, cfg: OpticsConfig):
    n, p, b = cfg.n_samples, cfg.psf_size, cfg.binning
    lo = n // 2 - p * b // 2
    inside = intensity[:, lo : lo + p * b, lo : lo + p * b].sum(axis=(1, 2))
    frac = inside / intensity.sum(axis=(1, 2))
    bad = [CHANNELS[i] for i in np.nonzero(frac < UNDERFLOW_FRACTION)[0]]
    if bad:
        warnings.warn(
            f"PSF energy inside the {p}x{p} crop below {UNDERFLOW_FRACTION:g} for channel(s) {bad}",
            PsfUnderflowWarning,
            stacklevel=3,
        )


def psf_stack_tensor(phi, cfg: OpticsConfig):
    """Differentiable ``(3, P, P)`` PSF stack from a phase-mask tensor."""
    inten = sensor_intensity(field_tensor(phi, cfg), cfg)
    _underflow_check(inten.value, cfg)
    return crop_bin_normalize(inten, cfg)


def pupil_field(mask: PhaseMask, cfg: OpticsConfig, channel: int) -> np.ndarray:
    _check_grid(mask.grid, cfg)
    return field_tensor(mask.phi, cfg).value[channel]


def full_intensity(mask: PhaseMask, cfg: OpticsConfig) -> np.ndarray:
    """Uncropped, unnormalised sensor-plane intensity for all channels."""
    _check_grid(mask.grid, cfg)
    return sensor_intensity(field_tensor(mask.phi, cfg), cfg).value


def psf_stack(mask: PhaseMask, cfg: OpticsConfig) -> PsfStack:
    _check_grid(mask.grid, cfg)
    return PsfStack(psf_stack_tensor(mask.phi, cfg).value)


def psf(mask: PhaseMask, cfg: OpticsConfig, channel: int) -> np.ndarray:
    """Unit-sum ``psf_size x psf_size`` kernel for one colour channel."""
    return psf_stack(mask, cfg).kernels[channel]
