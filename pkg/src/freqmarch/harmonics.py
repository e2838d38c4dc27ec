"""Associated Legendre functions and shell-wise spherical harmonic transforms.

Harmonics are ``Y_n^m = S_n^m P_n^|m|(cos theta) exp(i m phi)`` with the
Condon-Shortley phase inside ``P_n^m`` and

    S_n^m = sqrt((2n+1)/(4 pi)) sqrt((n-|m|)!/(n+|m|)!).

Coefficient vectors of one shell are unrolled as
``f_00, f_1-1, f_10, f_11, f_2-2, ...`` i.e. ``f_nm`` sits at ``n*n + n + m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class HarmonicsError(ValueError):
    """Degree/order out of range or a grid too coarse for the degree."""


def degree_for_shell(k: float) -> int:
    """Expansion degree used on the shell of radius ``k``."""
    return int(round(k)) + 2


def ncoeff(p: int) -> int:
    return (p + 1) ** 2


def lm_index(n, m):
    return n * n + n + m


@lru_cache(maxsize=None)
def _nm_arrays(p: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.repeat(np.arange(p + 1), 2 * np.arange(p + 1) + 1)
    m = np.concatenate([np.arange(-j, j + 1) for j in range(p + 1)])
    return n, m


def nm_arrays(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and order of each entry of an unrolled coefficient vector."""
    return _nm_arrays(p)


def legendre_table(p: int, x) -> np.ndarray:
    """Normalised ``S_n^m P_n^m(x)`` for ``0 <= m <= n <= p``.

    Returns an array of shape ``(p+1, p+1, len(x))`` indexed ``[n, m]``,
    zero where ``m > n``. Computed by the standard upward recurrence in
    ``n`` for each ``m`` on normalised values, which stays in range for the
    degrees used here.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    s = np.sqrt(np.clip(1 - x * x, 0, None))
    out = np.zeros((p + 1, p + 1, x.size))
    pmm = np.full(x.size, 1 / math.sqrt(4 * math.pi))
    for m in range(p + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2 * m)) * s * pmm
        out[m, m] = pmm
        if m + 1 <= p:
            out[m + 1, m] = math.sqrt(2 * m + 3) * x * pmm
        for n in range(m + 2, p + 1):
            a = math.sqrt((4 * n * n - 1) / (n * n - m * m))
            b = math.sqrt(((n - 1) ** 2 - m * m) / (4 * (n - 1) ** 2 - 1))
            out[n, m] = a * (x * out[n - 1, m] - b * out[n - 2, m])
    return out


def snm(n: int, m: int) -> float:
    """Normalisation constant ``S_n^m``."""
    m = abs(m)
    return math.sqrt((2 * n + 1) / (4 * math.pi)) * math.exp(
        0.5 * (math.lgamma(n - m + 1) - math.lgamma(n + m + 1))
    )


def assoc_legendre(n: int, m: int, x):
    """Associated Legendre function ``P_n^m(x)`` including ``(-1)^m``."""
    if not (0 <= m <= n):
        raise HarmonicsError(f"need 0 <= m <= n, got n={n}, m={m}")
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) > 1):
        raise HarmonicsError("x must lie in [-1, 1]")
    val = legendre_table(n, xa.ravel())[n, m] / snm(n, m)
    return val.reshape(xa.shape) if xa.ndim else float(val[0])


def ynm(n: int, m: int, theta, phi):
    """Orthonormal spherical harmonic ``Y_n^m(theta, phi)``."""
    if abs(m) > n or n < 0:
        raise HarmonicsError(f"need |m| <= n, got n={n}, m={m}")
    th = np.asarray(theta, dtype=float)
    ph = np.asarray(phi, dtype=float)
    th, ph = np.broadcast_arrays(th, ph)
    pl = legendre_table(n, np.cos(th).ravel())[n, abs(m)].reshape(th.shape)
    out = pl * np.exp(1j * m * ph)
    return out if out.ndim else complex(out)


class ShellTransform:
    """Evaluation, analysis and adjoint between degree-``p`` coefficients and
    values on a ``ntheta x nphi`` Chebyshev/equispaced grid.

    Evaluation separates variables: Legendre sums per polar row, then one
    length-``nphi`` FFT per row. Analysis is the Fejer-weighted least-squares
    projection per order ``m``; it is the exact inverse of evaluation for
    ``ntheta > p`` and ``nphi > 2p``, and reduces to the quadrature
    projection ``sum w_j (2 pi/nphi) values conj(Y)`` whenever that
    quadrature integrates the products exactly.
    """

    def __init__(self, p: int, ntheta: int, nphi: int):
        if p > ntheta - 1:
            raise HarmonicsError(f"degree {p} needs ntheta > {p}, have {ntheta}")
        if 2 * p + 1 > nphi:
            raise HarmonicsError(f"degree {p} needs nphi > {2 * p}, have {nphi}")
        from .sphgrid import fejer_nodes_weights

        self.p, self.ntheta, self.nphi = p, ntheta, nphi
        theta, w = fejer_nodes_weights(ntheta)
        self.theta, self.w = theta, w
        tab = legendre_table(p, np.cos(theta))  # [n, |m|, j]
        ms = np.arange(-p, p + 1)
        self.ptab = tab[:, np.abs(ms), :]  # [n, m + p, j]
        self.mcols = ms % nphi
        n, m = nm_arrays(p)
        self.n_of, self.m_of = n, m
        self._tab = tab
        self._proj = None

    @property
    def proj(self):
        # per-order weighted pseudo-inverses, built on first use
        if self._proj is None:
            sw = np.sqrt(self.w)
            self._proj = []
            for mm in range(self.p + 1):
                pm = self._tab[mm:, mm, :].T  # ntheta x (p - mm + 1)
                self._proj.append(np.linalg.pinv(sw[:, None] * pm) * sw[None, :])
        return self._proj

    def _to_matrix(self, c):
        cm = np.zeros((self.p + 1, 2 * self.p + 1), dtype=complex)
        cm[self.n_of, self.m_of + self.p] = c
        return cm

    def evaluate(self, c) -> np.ndarray:
        c = np.asarray(c)
        if c.shape != (ncoeff(self.p),):
            raise HarmonicsError(f"expected {ncoeff(self.p)} coefficients, got {c.shape}")
        a = np.einsum("nm,nmj->jm", self._to_matrix(c), self.ptab)
        full = np.zeros((self.ntheta, self.nphi), dtype=complex)
        full[:, self.mcols] = a
        return np.fft.ifft(full, axis=1) * self.nphi

    def analyze(self, values) -> np.ndarray:
        values = np.asarray(values)
        if values.shape != (self.ntheta, self.nphi):
            raise HarmonicsError(f"values shape {values.shape} != grid {(self.ntheta, self.nphi)}")
        b = np.fft.fft(values, axis=1) / self.nphi
        out = np.zeros(ncoeff(self.p), dtype=complex)
        for mm in range(self.p + 1):
            ns = np.arange(mm, self.p + 1)
            cols = [mm % self.nphi] if mm == 0 else [mm % self.nphi, (-mm) % self.nphi]
            sol = self.proj[mm] @ b[:, cols]
            out[lm_index(ns, mm)] = sol[:, 0]
            if mm:
                out[lm_index(ns, -mm)] = sol[:, 1]
        return out

    def adjoint(self, v) -> np.ndarray:
        """Adjoint of :meth:`evaluate` under the plain Euclidean products."""
        v = np.asarray(v)
        vf = np.fft.fft(v, axis=1)[:, self.mcols]  # [j, m + p]
        cm = np.einsum("nmj,jm->nm", self.ptab, vf)
        return cm[self.n_of, self.m_of + self.p]


@lru_cache(maxsize=64)
def shell_transform(p: int, ntheta: int, nphi: int) -> ShellTransform:
    return ShellTransform(p, ntheta, nphi)


def eval_on_regular_grid(c, sphere) -> np.ndarray:
    """Values of the expansion ``c`` on the grid of ``sphere`` (ntheta x nphi)."""
    p = int(round(math.sqrt(len(c)))) - 1
    return shell_transform(p, sphere.ntheta, sphere.nphi).evaluate(c)


def analyze_on_regular_grid(values, sphere, p: int) -> np.ndarray:
    """Degree-``p`` coefficients fitted to grid values."""
    return shell_transform(p, sphere.ntheta, sphere.nphi).analyze(values)


def adjoint_regular_grid(v, sphere, p: int) -> np.ndarray:
    return shell_transform(p, sphere.ntheta, sphere.nphi).adjoint(v)


def eval_at_points(c, theta, phi, chunk: int = 2048) -> np.ndarray:
    """Direct summation of the expansion at scattered ``(theta, phi)``."""
    c = np.asarray(c)
    p = int(round(math.sqrt(len(c)))) - 1
    if ncoeff(p) != len(c):
        raise HarmonicsError(f"{len(c)} is not a square coefficient count")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    shape = theta.shape
    theta, phi = theta.ravel(), phi.ravel()
    n, m = nm_arrays(p)
    cm = np.zeros((p + 1, 2 * p + 1), dtype=complex)
    cm[n, m + p] = c
    ms = np.arange(-p, p + 1)
    out = np.empty(theta.size, dtype=complex)
    for s in range(0, theta.size, chunk):
        sl = slice(s, s + chunk)
        tab = legendre_table(p, np.cos(theta[sl]))[:, np.abs(ms), :]
        a = np.einsum("nm,nmi->im", cm, tab)
        out[sl] = np.sum(a * np.exp(1j * np.outer(phi[sl], ms)), axis=1)
    return out.reshape(shape)


@dataclass
class VolumeModel:
    """Per-shell spherical harmonic coefficients of F.

    ``coeffs[q]`` is the unrolled vector on the shell of radius ``ks[q]`` with
    degree ``degree_for_shell(ks[q])``.
    """

    ks: np.ndarray
    coeffs: list

    def __post_init__(self):
        self.ks = np.asarray(self.ks, dtype=float)
        self.coeffs = [np.asarray(c, dtype=complex) for c in self.coeffs]
        if len(self.ks) != len(self.coeffs):
            raise HarmonicsError("one coefficient vector per shell required")
        for k, c in zip(self.ks, self.coeffs):
            if len(c) != ncoeff(degree_for_shell(k)):
                raise HarmonicsError(f"shell k={k} needs {ncoeff(degree_for_shell(k))} coefficients, got {len(c)}")

    @property
    def nr(self) -> int:
        return len(self.ks)

    @property
    def degrees(self) -> list[int]:
        return [degree_for_shell(k) for k in self.ks]

    @classmethod
    def zeros(cls, ks) -> "VolumeModel":
        return cls(ks, [np.zeros(ncoeff(degree_for_shell(k)), dtype=complex) for k in ks])

    def restrict(self, k_upper: float) -> "VolumeModel":
        keep = [q for q, k in enumerate(self.ks) if k <= k_upper + 1e-9]
        return VolumeModel(self.ks[keep], [self.coeffs[q].copy() for q in keep])

    def mirrored(self) -> "VolumeModel":
        """Model of the point reflection ``f(-x)``: ``f_nm -> (-1)^n f_nm``."""
        out = []
        for k, c in zip(self.ks, self.coeffs):
            n, _ = nm_arrays(degree_for_shell(k))
            out.append(c * (-1.0) ** n)
        return VolumeModel(self.ks.copy(), out)

    def values_on_grid(self, sphere) -> np.ndarray:
        """F on every node of ``ks x sphere``; shape ``(nr, ntheta, nphi)``."""
        return np.stack([eval_on_regular_grid(c, sphere) for c in self.coeffs])

    def __add__(self, other: "VolumeModel") -> "VolumeModel":
        if not np.array_equal(self.ks, other.ks):
            raise HarmonicsError("models live on different shells")
        return VolumeModel(self.ks.copy(), [a + b for a, b in zip(self.coeffs, other.coeffs)])
