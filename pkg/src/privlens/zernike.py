"""Zernike polynomials in Noll ordering, sampled on a square pupil grid."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial

import numpy as np


def noll_to_nm(j: int) -> tuple[int, int]:
    """Map a 1-based Noll index to ``(n, m)``.

    Even ``j`` carries the cosine term (``m >= 0``), odd ``j`` the sine term
    (``m < 0``), as in Noll (1976).
    """
    j = int(j)
    if j < 1:
        raise ValueError(f"Noll index must be >= 1, got {j}")
    n = 0
    rem = j - 1
    while rem > n:
        n += 1
        rem -= n
    m = (n % 2) + 2 * ((rem + ((n + 1) % 2)) // 2)
    if m != 0 and j % 2 == 1:
        m = -m
    return n, m


def nm_to_noll(n: int, m: int) -> int:
    """Inverse of :func:`noll_to_nm`."""
    if n < 0 or abs(m) > n or (n - abs(m)) % 2:
        raise ValueError(f"invalid Zernike order (n={n}, m={m})")
    base = n * (n + 1) // 2
    if m == 0:
        return base + 1
    lo = base + abs(m)
    # the pair (lo, lo + 1) holds cos/sin; cosine takes the even index
    even, odd = (lo, lo + 1) if lo % 2 == 0 else (lo + 1, lo)
    return even if m > 0 else odd


def radial_poly(n: int, m: int, rho):
    """Zernike radial polynomial R_n^|m|(rho) via the factorial sum."""
    m = abs(m)
    if n < m or (n - m) % 2:
        raise ValueError(f"n - |m| must be even and non-negative (n={n}, m={m})")
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * factorial(n - s) // (
            factorial(s) * factorial((n + m) // 2 - s) * factorial((n - m) // 2 - s)
        )
        out = out + c * rho ** (n - 2 * s)
    return out


def zernike(j: int, rho, theta):
    """Noll-normalized Z_j evaluated at polar coordinates (no disk masking)."""
    n, m = noll_to_nm(j)
    r = radial_poly(n, m, rho)
    if m == 0:
        return np.sqrt(n + 1) * r
    ang = np.cos(m * theta) if m > 0 else np.sin(-m * theta)
    return np.sqrt(2 * (n + 1)) * r * ang


@dataclass(frozen=True)
class PupilGrid:
    """Square grid of ``n_samples`` points spanning the aperture diameter.

    Sample centres sit at half-integer offsets from the optical axis so the
    grid is exactly symmetric under ``(u, v) -> (-u, -v)``.
    """

    n_samples: int
    aperture_diameter: float

    def __post_init__(self):
        if self.n_samples < 8 or self.n_samples % 2:
            raise ValueError(f"n_samples must be even and >= 8, got {self.n_samples}")
        if not self.aperture_diameter > 0:
            raise ValueError("aperture_diameter must be positive")

    @property
    def pitch(self) -> float:
        return self.aperture_diameter / self.n_samples

    @cached_property
    def axis(self) -> np.ndarray:
        return (np.arange(self.n_samples) - (self.n_samples - 1) / 2) * self.pitch

    @cached_property
    def uv(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="xy")

    @cached_property
    def rho(self) -> np.ndarray:
        u, v = self.uv
        return np.hypot(u, v) / (self.aperture_diameter / 2)

    @cached_property
    def theta(self) -> np.ndarray:
        u, v = self.uv
        return np.arctan2(v, u)

    @cached_property
    def disk(self) -> np.ndarray:
        # boundary samples count as inside
        return self.rho <= 1.0


@dataclass(frozen=True)
class ZernikeBasis:
    grid: PupilGrid
    maps: np.ndarray  # (q, n, n)

    @property
    def q(self) -> int:
        return self.maps.shape[0]

    def gram(self) -> np.ndarray:
        flat = self.maps.reshape(self.q, -1)
        return flat @ flat.T / self.grid.disk.sum()


def build_basis(grid: PupilGrid, q: int) -> ZernikeBasis:
    if q < 1:
        raise ValueError(f"basis size q must be >= 1, got {q}")
    inside = grid.disk
    maps = np.zeros((q, grid.n_samples, grid.n_samples))
    for j in range(1, q + 1):
        maps[j - 1][inside] = zernike(j, grid.rho[inside], grid.theta[inside])
    maps.setflags(write=False)
    return ZernikeBasis(grid, maps)


@dataclass(frozen=True)
class PhaseMask:
    grid: PupilGrid
    phi: np.ndarray  # optical path difference in micrometres


def compose_mask(basis: ZernikeBasis, alpha) -> PhaseMask:
    """Phase mask ``sum_j alpha_j Z_j`` with ``alpha`` in micrometres of OPD."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape != (basis.q,):
        raise ValueError(f"expected {basis.q} coefficients, got shape {alpha.shape}")
    if not np.all(np.isfinite(alpha)):
        raise ValueError("coefficients must be finite")
    return PhaseMask(basis.grid, np.tensordot(alpha, basis.maps, axes=1))
