"""Spherical k-space grids, quadrature weights and the inverse transform to a
real-space cube.

Fourier convention used throughout the package::

    F(k) = int f(x) exp(+i k.x) dx
    f(x) = (2 pi)^-3 int F(k) exp(-i k.x) dk

Lengths are dimensionless (the particle fits in the unit ball); multiply by
``D`` to get Angstrom.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .harmonics import degree_for_shell


class GridError(ValueError):
    """Invalid grid parameters or array shapes."""


@dataclass(frozen=True)
class RadialGrid:
    """Equispaced shells ``k = dk, 2 dk, ..., kmax``."""

    k_values: np.ndarray
    dk: float

    @property
    def nr(self) -> int:
        return len(self.k_values)

    @property
    def kmax(self) -> float:
        return float(self.k_values[-1])

    def restrict(self, k_upper: float) -> "RadialGrid":
        """Shells with ``k <= k_upper`` (small slack for rounding)."""
        keep = self.k_values <= k_upper + 1e-9 * self.dk
        return RadialGrid(self.k_values[keep], self.dk)


@dataclass(frozen=True)
class SphereGrid:
    """Product grid: Chebyshev polar angles times equispaced azimuths."""

    ntheta: int
    nphi: int
    theta: np.ndarray = field(repr=False)
    mu: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @classmethod
    def create(cls, ntheta: int, nphi: int) -> "SphereGrid":
        if ntheta < 1 or nphi < 1:
            raise GridError(f"need ntheta, nphi >= 1, got {ntheta}, {nphi}")
        theta, w = fejer_nodes_weights(ntheta)
        phi = 2 * np.pi * np.arange(nphi) / nphi
        return cls(ntheta, nphi, theta, np.cos(theta), w, phi)


def fejer_nodes_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar angles ``theta_j = (2j-1) pi / 2n`` and Fejer's first-rule
    weights for ``mu = cos(theta)`` on [-1, 1].

    The rule is interpolatory, so it integrates polynomials in ``mu`` of
    degree below ``n`` exactly.
    """
    if n < 1:
        raise GridError("need at least one node")
    theta = (2 * np.arange(1, n + 1) - 1) * np.pi / (2 * n)
    k = np.arange(1, n // 2 + 1)
    s = np.cos(2 * np.outer(theta, k)) / (4 * k**2 - 1)
    w = (2.0 / n) * (1 - 2 * s.sum(axis=1))
    return theta, w


def _even_ceil(x: float) -> int:
    n = int(math.ceil(x - 1e-9))
    return n + (n % 2)


def build_grids(kmax: float, dk: float = 2.0, oversample: float = 1.2) -> tuple[RadialGrid, SphereGrid]:
    """Radial shells and the shared angular grid for band limit ``kmax``.

    ``ntheta >= oversample * kmax`` and ``nphi >= 2 * oversample * kmax`` as
    the sampling argument requires; both are also raised, if needed, so that
    the top shell's expansion (degree ``p = kmax + 2``) is resolvable on the
    grid (``ntheta > p`` and ``nphi > 2p``).
    """
    if not (kmax > 0 and dk > 0):
        raise GridError(f"kmax and dk must be positive (kmax={kmax}, dk={dk})")
    if kmax < dk * (1 - 1e-12):
        raise GridError(f"kmax={kmax} is below one radial step dk={dk}")
    if oversample < 1:
        raise GridError("oversample must be >= 1")
    nr = int(round(kmax / dk))
    if abs(nr * dk - kmax) > 1e-9 * kmax:
        raise GridError(f"kmax={kmax} is not a multiple of dk={dk}")
    radial = RadialGrid(dk * np.arange(1, nr + 1, dtype=float), float(dk))
    p = degree_for_shell(kmax)
    ntheta = max(int(math.ceil(oversample * kmax - 1e-9)), p + 1)
    nphi = max(_even_ceil(2 * oversample * kmax), _even_ceil(2 * p + 2))
    return radial, SphereGrid.create(ntheta, nphi)


def quadrature_weights_3d(radial: RadialGrid, sphere: SphereGrid) -> np.ndarray:
    """Weights ``(2 pi / nphi) k^2 w_j dk`` with shape ``(nr, ntheta, nphi)``.

    The radial factor is the trapezoid rule on ``[0, kmax]``: the ``k = 0``
    node carries no weight and the outermost shell gets half.
    """
    k2 = radial.k_values**2
    k2[-1] *= 0.5
    wt = (2 * np.pi / sphere.nphi) * radial.dk * k2[:, None] * sphere.w[None, :]
    return np.broadcast_to(wt[:, :, None], (radial.nr, sphere.ntheta, sphere.nphi)).copy()


def grid_kpoints(radial: RadialGrid, sphere: SphereGrid) -> np.ndarray:
    """Cartesian coordinates of all grid nodes, shape ``(nr, ntheta, nphi, 3)``."""
    st = np.sin(sphere.theta)
    u = np.stack(
        [
            st[:, None] * np.cos(sphere.phi)[None, :],
            st[:, None] * np.sin(sphere.phi)[None, :],
            np.broadcast_to(sphere.mu[:, None], (sphere.ntheta, sphere.nphi)),
        ],
        axis=-1,
    )
    return radial.k_values[:, None, None, None] * u[None]


def cube_axis(n: int) -> np.ndarray:
    """Cell-centre sample positions of an ``n``-point axis over [-1, 1]."""
    return -1 + (2 * np.arange(n) + 1) / n


@dataclass
class DensityCube:
    """Real density on an ``n^3`` cell-centred grid over [-1, 1]^3.

    ``values[ix, iy, iz]``; ``imag_residual`` is the largest imaginary part
    discarded by the inverse transform (zero for cubes built in real space).
    """

    values: np.ndarray
    D: float = 1.0
    imag_residual: float = 0.0

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or len(set(v.shape)) != 1:
            raise GridError(f"cube must be n x n x n, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise GridError("cube has non-finite values")
        self.values = v


def inverse_fourier_volume(
    values: np.ndarray,
    radial: RadialGrid,
    sphere: SphereGrid,
    n: int = 100,
    D: float = 1.0,
    method: str = "nufft",
) -> DensityCube:
    """Quadrature sum of the inverse transform evaluated on an ``n^3`` cube.

    ``values`` holds F at every grid node, shape ``(nr, ntheta, nphi)``.
    ``method="direct"`` sums the exponentials explicitly (slow, used as an
    oracle); ``"nufft"`` uses a type-1 non-uniform FFT to tolerance 1e-12.
    """
    values = np.asarray(values)
    shape = (radial.nr, sphere.ntheta, sphere.nphi)
    if values.shape != shape:
        raise GridError(f"sample array has shape {values.shape}, expected {shape}")
    wts = quadrature_weights_3d(radial, sphere) / (2 * np.pi) ** 3
    c = (values * wts).ravel().astype(complex)
    kp = grid_kpoints(radial, sphere).reshape(-1, 3)
    if not np.any(c):
        return DensityCube(np.zeros((n, n, n)), D)
    if method == "direct":
        out = _direct_sum_3d(c, kp, cube_axis(n))
    elif method == "nufft":
        out = _nufft_sum_3d(c, kp, n)
    else:
        raise GridError(f"unknown method {method!r}")
    scale = np.abs(out.real).max()
    resid = float(np.abs(out.imag).max() / scale) if scale > 0 else 0.0
    return DensityCube(out.real, D, resid)


def _direct_sum_3d(c, kp, x):
    ex = np.exp(-1j * np.outer(x, kp[:, 0]))
    ey = np.exp(-1j * np.outer(x, kp[:, 1]))
    ez = np.exp(-1j * np.outer(x, kp[:, 2]))
    n = len(x)
    out = np.empty((n, n, n), dtype=complex)
    for a in range(n):
        out[a] = (ey * (c * ex[a])) @ ez.T
    return out


def _nufft_sum_3d(c, kp, n):
    import finufft

    # finufft modes j = a - n//2; cell centres are x_a = h (j + shift)
    h = 2.0 / n
    shift = 0.0 if n % 2 else 0.5
    pts = kp * h
    if np.abs(pts).max() > 3 * np.pi:
        raise GridError("cube too coarse for this band limit")
    cc = c * np.exp(-1j * shift * pts.sum(axis=1))
    out = finufft.nufft3d1(pts[:, 0].copy(), pts[:, 1].copy(), pts[:, 2].copy(), cc, (n, n, n),
                           eps=1e-12, isign=-1, modeord=0)
    return out
