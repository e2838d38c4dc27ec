"""Radially symmetric contrast transfer function."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DEFOCUS_RANGE = (1.0e4, 4.0e4)


@dataclass(frozen=True)
class CtfParams:
    """Microscope constants for one image. Lengths in Angstrom.

    ``D`` converts numerical wavenumbers to scattering angles via
    ``theta = wavelength * k / (2 pi D)``.
    """

    defocus: float = 2.5e4
    cs: float = 2.0e7
    wavelength: float = 0.025
    theta0: float = 0.002
    w2: float = 0.07
    D: float = 25.0

    def __post_init__(self):
        if not (0 <= self.w2 < 1):
            raise ValueError(f"w2 must lie in [0, 1), got {self.w2}")
        for name in ("defocus", "cs", "wavelength", "theta0", "D"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def w1(self) -> float:
        return math.sqrt(1 - self.w2**2)

    def with_defocus(self, z: float) -> "CtfParams":
        return replace(self, defocus=float(z))


def eval_ctf(p: CtfParams | None, k):
    """``C(k) = exp(-theta^2/theta0^2) (w1 sin chi - w2 cos chi)`` with
    ``chi = k z theta^2 / 2 + k Cs theta^4 / 8``.

    ``k`` is the numerical wavenumber; ``p=None`` is the identity filter.
    """
    k = np.asarray(k, dtype=float)
    if p is None:
        return np.ones_like(k)
    if np.any(k < 0):
        raise ValueError("wavenumber must be non-negative")
    th = p.wavelength * k / (2 * np.pi * p.D)
    chi = 0.5 * k * p.defocus * th**2 + k * p.cs * th**4 / 8
    return np.exp(-(th / p.theta0) ** 2) * (p.w1 * np.sin(chi) - p.w2 * np.cos(chi))


def random_defocus(rng: np.random.Generator) -> float:
    lo, hi = DEFOCUS_RANGE
    return float(rng.uniform(lo, hi))
