"""Angular Fourier coefficients of all central slices over the orientation grid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .harmonics import HarmonicsError, VolumeModel, degree_for_shell, legendre_table, nm_arrays
from .simulate import slice_directions, to_spherical
from .sphgrid import SphereGrid


@dataclass(frozen=True)
class AngleGrid:
    """Candidate ``alpha`` at the polar nodes, ``beta`` and ``gamma`` at the
    azimuthal nodes of the shared sphere grid."""

    alphas: np.ndarray
    betas: np.ndarray
    gammas: np.ndarray

    @classmethod
    def from_sphere(cls, sphere: SphereGrid) -> "AngleGrid":
        return cls(sphere.theta.copy(), sphere.phi.copy(), sphere.phi.copy())

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.alphas), len(self.betas), len(self.gammas)

    @property
    def ntemplates(self) -> int:
        return len(self.alphas) * len(self.betas)

    def triple(self, i: int, j: int, l: int) -> tuple[float, float, float]:
        return float(self.alphas[i]), float(self.betas[j]), float(self.gammas[l])


def slice_point(alpha, beta, psi, k):
    """Cartesian point ``k Rz(beta) Ry(alpha) e(psi)`` and its ``(theta, phi)``.

    Returns ``(xyz, theta, phi)`` with ``xyz[..., :]`` = ``(x, y, z)``;
    ``z = -k sin(alpha) cos(psi)`` does not depend on ``beta``.
    """
    xyz = np.asarray(k, dtype=float)[..., None] * slice_directions(alpha, beta, psi)
    theta, phi = to_spherical(xyz)
    return xyz, theta, phi


@dataclass
class TemplateBank:
    """``coeffs[i, j, q, n + nmax] = S^{ij}_n(k_q)``, zero for ``|n| > p(k_q)``.

    ``energy[i, j, q] = sum_n |S^{ij}_n(k_q)|^2`` is kept for the norms.
    """

    grid: AngleGrid
    ks: np.ndarray
    coeffs: np.ndarray
    energy: np.ndarray

    @property
    def nmax(self) -> int:
        return (self.coeffs.shape[-1] - 1) // 2

    @property
    def nr(self) -> int:
        return len(self.ks)

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """Views with the two angle axes merged into ``t = i * nbeta + j``."""
        na, nb = self.coeffs.shape[:2]
        return self.coeffs.reshape(na * nb, self.nr, -1), self.energy.reshape(na * nb, self.nr)


def shell_templates(c: np.ndarray, k: float, grid: AngleGrid, nmax: int | None = None) -> np.ndarray:
    """Templates on one shell: ``(nalpha, nbeta, 2 nmax + 1)``.

    With ``theta_il, phi_il0`` the slice point for ``(alpha_i, beta=0,
    psi_l)``, ``F(theta_il, phi_il0 + beta_j) = sum_m A_iml exp(i m phi_il0)
    exp(i m beta_j)``, so one FFT over ``m`` gives every ``beta_j`` and one
    FFT over ``psi`` gives the angular coefficients.
    """
    p = degree_for_shell(k)
    nmax = p if nmax is None else nmax
    na, nb, npsi = grid.shape
    if nb < 2 * p + 1 or npsi < 2 * p + 1:
        raise HarmonicsError(f"degree {p} needs at least {2 * p + 1} beta and psi samples")
    psi = grid.gammas
    _, th, ph = slice_point(grid.alphas[:, None], 0.0, psi[None, :], 1.0)
    tab = legendre_table(p, np.cos(th).ravel()).reshape(p + 1, p + 1, na, npsi)  # [n, |m|, i, l]
    n_of, m_of = nm_arrays(p)
    cm = np.zeros((p + 1, 2 * p + 1), dtype=complex)
    cm[n_of, m_of + p] = c
    ms = np.arange(-p, p + 1)
    a = np.einsum("nm,nmil->iml", cm, tab[:, np.abs(ms)])  # A_iml
    a *= np.exp(1j * ms[None, :, None] * ph[:, None, :])
    full = np.zeros((na, nb, npsi), dtype=complex)
    full[:, ms % nb, :] = a
    vals = np.fft.ifft(full, axis=1) * nb  # F at (i, j, l)
    spec = np.fft.fft(vals, axis=2) / npsi
    ns = np.arange(-nmax, nmax + 1)
    out = spec[:, :, ns % npsi]
    out[:, :, np.abs(ns) > p] = 0
    return out


def generate_templates(model: VolumeModel, grid: AngleGrid, k_upper: float | None = None,
                       dtype=np.complex128) -> TemplateBank:
    """Template bank for all shells ``k_q <= k_upper``."""
    if k_upper is None:
        k_upper = float(model.ks.max())
    if k_upper > model.ks.max() + 1e-9:
        raise HarmonicsError(f"k_upper={k_upper} beyond the model's last shell {model.ks.max()}")
    sub = model.restrict(k_upper)
    if sub.nr == 0:
        raise HarmonicsError("no shells below k_upper")
    nmax = degree_for_shell(sub.ks.max())
    na, nb, _ = grid.shape
    coeffs = np.zeros((na, nb, sub.nr, 2 * nmax + 1), dtype=dtype)
    for q, (k, c) in enumerate(zip(sub.ks, sub.coeffs)):
        coeffs[:, :, q, :] = shell_templates(c, k, grid, nmax)
    energy = np.sum(np.abs(coeffs) ** 2, axis=-1).astype(float)
    return TemplateBank(grid, sub.ks.copy(), coeffs, energy)
