"""Synthetic particle images and their polar Fourier representation.

Image model. For orientation ``(alpha, beta, gamma)`` let
``Q = Rz(beta) Ry(alpha) Rz(gamma)``. The image is the projection
``I(x, y) = int f(Q (x, y, z)) dz`` filtered by the CTF, so by the
projection-slice theorem its 2D transform on the polar grid is

    M(k, psi) = C(k) F(Q k e(psi)),    e(psi) = (cos psi, sin psi, 0),

i.e. ``M(k, psi - gamma) = C(k) S_{alpha,beta}(k, psi)`` where
``S_{alpha,beta}`` is the template slice parametrised by ``slice_point``.
Pixel arrays are indexed ``pixels[ix, iy]`` on cell centres over [-1, 1]^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .harmonics import VolumeModel, degree_for_shell, eval_at_points
from .optics import CtfParams, eval_ctf, random_defocus
from .sphgrid import RadialGrid, SphereGrid, cube_axis


class SimulationError(ValueError):
    pass


# ---------------------------------------------------------------- rotations

@dataclass(frozen=True)
class Orientation:
    """Euler triple: beam direction ``(alpha, beta)`` and in-plane ``gamma``."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if not (0 <= self.alpha <= np.pi):
            raise SimulationError(f"alpha={self.alpha} outside [0, pi]")
        for name in ("beta", "gamma"):
            v = getattr(self, name)
            if not (0 <= v < 2 * np.pi):
                raise SimulationError(f"{name}={v} outside [0, 2 pi)")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.alpha, self.beta, self.gamma)


def _rz(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(t):
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """``Rz(beta) @ Ry(alpha) @ Rz(gamma)``."""
    return _rz(beta) @ _ry(alpha) @ _rz(gamma)


def euler_from_matrix(R: np.ndarray) -> Orientation:
    """Inverse of :func:`rotation_matrix` (``gamma = 0`` convention at the poles)."""
    R = np.asarray(R, dtype=float)
    alpha = math.acos(float(np.clip(R[2, 2], -1.0, 1.0)))
    if math.sin(alpha) > 1e-12:
        beta = math.atan2(R[1, 2], R[0, 2])
        gamma = math.atan2(R[2, 1], -R[2, 0])
    else:
        # only beta + gamma (alpha=0) or beta - gamma (alpha=pi) is defined
        beta = math.atan2(R[1, 0], R[0, 0]) if alpha < 1 else math.atan2(-R[1, 0], -R[0, 0])
        gamma = 0.0
    two_pi = 2 * np.pi
    return Orientation(alpha, beta % two_pi % two_pi, gamma % two_pi % two_pi)


def sample_orientation(rng: np.random.Generator) -> Orientation:
    """Uniform on SO(3): ``cos alpha`` uniform on [-1, 1], ``beta, gamma`` uniform."""
    ca = rng.uniform(-1.0, 1.0)
    beta = rng.uniform(0.0, 2 * np.pi)
    gamma = rng.uniform(0.0, 2 * np.pi)
    return Orientation(math.acos(ca), beta, gamma)


def slice_directions(alpha, beta, psi):
    """Unit vectors ``Rz(beta) Ry(alpha) e(psi)``; broadcasting, last axis xyz."""
    alpha, beta, psi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (alpha, beta, psi)))
    ca, sa = np.cos(alpha), np.sin(alpha)
    cb, sb = np.cos(beta), np.sin(beta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.stack([cb * ca * cp - sb * sp, sb * ca * cp + cb * sp, -sa * cp], axis=-1)


def to_spherical(u):
    """Polar and azimuthal angles of (not necessarily unit) vectors."""
    u = np.asarray(u, dtype=float)
    r = np.linalg.norm(u, axis=-1)
    theta = np.arccos(np.clip(u[..., 2] / np.where(r > 0, r, 1), -1, 1))
    phi = np.mod(np.arctan2(u[..., 1], u[..., 0]), 2 * np.pi)
    return theta, phi


# ---------------------------------------------------------------- data types

@dataclass
class PixelImage:
    pixels: np.ndarray  # (npix, npix), pixels[ix, iy]
    defocus: float
    true_orientation: Orientation | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2 or self.pixels.shape[0] != self.pixels.shape[1] or self.pixels.shape[0] < 2:
            raise SimulationError(f"pixels must be npix x npix with npix >= 2, got {self.pixels.shape}")
        if not np.all(np.isfinite(self.pixels)):
            raise SimulationError("non-finite pixel values")

    @property
    def npix(self) -> int:
        return self.pixels.shape[0]


@dataclass
class ParticleStack:
    """``M`` images with per-image defocus and optional true orientations."""

    pixels: np.ndarray  # (M, npix, npix)
    defocus: np.ndarray  # (M,)
    orientations: np.ndarray | None  # (M, 3) or None
    D: float = 1.0

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        self.defocus = np.asarray(self.defocus, dtype=float)
        if self.pixels.ndim != 3:
            raise SimulationError("stack pixels must have shape (M, npix, npix)")
        if len(self.defocus) != len(self.pixels):
            raise SimulationError("one defocus value per image required")
        if self.orientations is not None:
            self.orientations = np.asarray(self.orientations, dtype=float).reshape(-1, 3)

    def __len__(self) -> int:
        return len(self.pixels)

    @property
    def npix(self) -> int:
        return self.pixels.shape[1]

    def image(self, m: int) -> PixelImage:
        ori = None if self.orientations is None else Orientation(*self.orientations[m])
        return PixelImage(self.pixels[m], float(self.defocus[m]), ori)


@dataclass
class PolarImage:
    """Fourier data of one image (or a batch) on the shells ``ks``.

    ``rings[..., q, l] = M(k_q, psi_l)`` at ``nphi`` equispaced ``psi``;
    ``coeffs[..., q, n + nmax]`` are the angular Fourier coefficients
    ``M_n(k_q)`` with ``M(k, psi) = sum_n M_n(k) exp(i n psi)``, zero for
    ``|n| > p(k_q)``. ``rings`` may be ``None`` when only coefficients are
    needed.
    """

    ks: np.ndarray
    rings: np.ndarray
    coeffs: np.ndarray

    @property
    def nmax(self) -> int:
        return (self.coeffs.shape[-1] - 1) // 2

    @property
    def nr(self) -> int:
        return len(self.ks)

    def __len__(self) -> int:
        return 1 if self.coeffs.ndim == 2 else self.coeffs.shape[0]

    def __getitem__(self, idx) -> "PolarImage":
        if self.coeffs.ndim == 2:
            raise TypeError("single polar image is not indexable")
        return PolarImage(self.ks, None if self.rings is None else self.rings[idx], self.coeffs[idx])

    def restrict(self, k_upper: float) -> "PolarImage":
        keep = self.ks <= k_upper + 1e-9
        rings = None if self.rings is None else self.rings[..., keep, :]
        return PolarImage(self.ks[keep], rings, self.coeffs[..., keep, :])


def ring_coeffs_from_values(rings: np.ndarray, ks) -> np.ndarray:
    """Angular Fourier coefficients of ring samples, truncated to ``|n| <= p(k)``."""
    nphi = rings.shape[-1]
    pmax = degree_for_shell(max(ks))
    if 2 * pmax + 1 > nphi:
        raise SimulationError(f"{nphi} ring samples cannot resolve degree {pmax}")
    spec = np.fft.fft(rings, axis=-1) / nphi
    ns = np.arange(-pmax, pmax + 1)
    out = spec[..., ns % nphi]
    for q, k in enumerate(ks):
        p = degree_for_shell(k)
        out[..., q, np.abs(ns) > p] = 0
    return out


def ring_values_from_coeffs(coeffs: np.ndarray, npsi: int, shift=0.0) -> np.ndarray:
    """``sum_n M_n exp(i n (psi_l + shift))`` at ``npsi`` equispaced ``psi``.

    ``shift`` broadcasts against ``coeffs.shape[:-1]`` and applies the exact
    Fourier phase shift.
    """
    nmax = (coeffs.shape[-1] - 1) // 2
    if 2 * nmax + 1 > npsi:
        raise SimulationError("too few ring samples for the stored modes")
    ns = np.arange(-nmax, nmax + 1)
    c = coeffs
    if np.any(shift):
        sh = np.asarray(shift, dtype=float)[..., None]
        c = coeffs * np.exp(1j * ns * sh)
    full = np.zeros(coeffs.shape[:-1] + (npsi,), dtype=complex)
    full[..., ns % npsi] = c
    return np.fft.ifft(full, axis=-1) * npsi


# ---------------------------------------------------------------- slices

def central_slice_coeffs(model: VolumeModel, alpha, beta, nphi: int, chunk: int = 4096) -> np.ndarray:
    """Angular Fourier coefficients of ``S_{alpha,beta}(k_q, psi)`` for a batch.

    The slice is evaluated by direct harmonic summation at ``nphi`` ring
    points. Returns ``(B, nr, 2 pmax + 1)``.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    psi = 2 * np.pi * np.arange(nphi) / nphi
    th, ph = to_spherical(slice_directions(alpha[:, None], beta[:, None], psi[None, :]))
    vals = np.empty((len(alpha), model.nr, nphi), dtype=complex)
    for q, c in enumerate(model.coeffs):
        vals[:, q, :] = eval_at_points(c, th, ph, chunk=chunk)
    return ring_coeffs_from_values(vals, model.ks)


def dc_value(model: VolumeModel) -> float:
    """``F(0)`` by polynomial extrapolation in ``k^2`` of the shell means."""
    nuse = min(3, model.nr)
    k2 = model.ks[:nuse] ** 2
    mean = np.array([c[0].real for c in model.coeffs[:nuse]]) / math.sqrt(4 * math.pi)
    if nuse == 1:
        return float(mean[0])
    # Lagrange extrapolation to k^2 = 0
    out = 0.0
    for i in range(nuse):
        li = 1.0
        for j in range(nuse):
            if j != i:
                li *= (0 - k2[j]) / (k2[i] - k2[j])
        out += li * mean[i]
    return float(out)


def _synthesis_npsi(kmax: float, pmax: int) -> int:
    # ring trapezoid is exact once npsi exceeds the slice degree plus the
    # effective bandwidth k |x| (|x| <= sqrt 2) of the plane wave
    n = pmax + int(math.ceil(math.sqrt(2) * kmax)) + 24
    return n + n % 2


def _nufft_pixels(weights, kx, ky, npix):
    """``sum_j w_j exp(-i (kx_j x_a + ky_j y_b))`` on the cell-centred grid.

    ``weights`` is ``(B, npts)``; returns ``(B, npix, npix)`` complex.
    """
    import finufft

    h = 2.0 / npix
    shift = 0.0 if npix % 2 else 0.5
    px, py = kx * h, ky * h
    if max(np.abs(px).max(), np.abs(py).max()) > 3 * np.pi:
        raise SimulationError("pixel grid too coarse for this band limit")
    c = np.ascontiguousarray(weights * np.exp(-1j * shift * (px + py)))
    out = finufft.nufft2d1(px.copy(), py.copy(), c, (npix, npix), eps=1e-12, isign=-1, modeord=0)
    return out.reshape(c.shape[:-1] + (npix, npix))


def pixels_from_ring_coeffs(coeffs, ks, dk: float, npix: int, dc=None) -> np.ndarray:
    """Inverse 2D transform of polar Fourier data to pixels.

    ``I(x) = (2 pi)^-2 int M(k) exp(-i k.x) d^2k`` with the ring trapezoid in
    ``psi`` and the radial rule ``sum_q k_q dk`` plus the endpoint term
    ``2 pi dk^2 / 12 * M(0)``. The radial integrand ``k g(k)`` has a kink at
    the origin, so without that term the rule leaves an ``O(dk^2)`` constant
    offset over the whole image; ``dc`` (one ``M(0)`` per image) removes it.
    """
    coeffs = np.asarray(coeffs)
    single = coeffs.ndim == 2
    if single:
        coeffs = coeffs[None]
        dc = None if dc is None else np.atleast_1d(dc)
    ks = np.asarray(ks, dtype=float)
    nmax = (coeffs.shape[-1] - 1) // 2
    npsi = _synthesis_npsi(ks.max(), nmax)
    rings = ring_values_from_coeffs(coeffs, npsi)  # (B, nr, npsi)
    psi = 2 * np.pi * np.arange(npsi) / npsi
    kx = (ks[:, None] * np.cos(psi)[None, :]).ravel()
    ky = (ks[:, None] * np.sin(psi)[None, :]).ravel()
    w = (ks * dk * 2 * np.pi / npsi)[:, None] / (2 * np.pi) ** 2
    out = _nufft_pixels((rings * w).reshape(len(coeffs), -1), kx, ky, npix)
    if dc is not None:
        out = out + (2 * np.pi * dk**2 / 12) / (2 * np.pi) ** 2 * np.asarray(dc)[:, None, None]
    out = out.real
    return out[0] if single else out


def image_to_polar(pixels, ks, nphi: int) -> PolarImage:
    """``M(k_q, psi_l) = sum_pixels h^2 I(x) exp(i k (cos psi x + sin psi y))``
    followed by one FFT per ring. Accepts one image or a batch."""
    import finufft

    pix = np.asarray(pixels, dtype=float)
    single = pix.ndim == 2
    if single:
        pix = pix[None]
    ks = np.asarray(ks, dtype=float)
    npix = pix.shape[-1]
    h = 2.0 / npix
    shift = 0.0 if npix % 2 else 0.5
    psi = 2 * np.pi * np.arange(nphi) / nphi
    px = (ks[:, None] * np.cos(psi)[None, :]).ravel() * h
    py = (ks[:, None] * np.sin(psi)[None, :]).ravel() * h
    if max(np.abs(px).max(), np.abs(py).max()) > 3 * np.pi:
        raise SimulationError("pixel grid too coarse for this band limit")
    f = np.ascontiguousarray(pix.astype(complex))
    vals = finufft.nufft2d2(px, py, f, eps=1e-12, isign=1, modeord=0)
    vals = vals.reshape(len(pix), -1) * (h * h) * np.exp(1j * shift * (px + py))
    rings = vals.reshape(len(pix), len(ks), nphi)
    coeffs = ring_coeffs_from_values(rings, ks)
    if single:
        return PolarImage(ks, rings[0], coeffs[0])
    return PolarImage(ks, rings, coeffs)


# ---------------------------------------------------------------- images

def image_rng(seed: int, m: int) -> np.random.Generator:
    """Independent stream for image ``m`` of a stack generated from ``seed``."""
    return np.random.default_rng([int(seed), int(m)])


def add_noise(signal: np.ndarray, snr: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise with ``sigma^2 = sum(signal^2) / (npix^2 snr)``."""
    if snr <= 0:
        raise SimulationError("snr must be positive")
    if math.isinf(snr):
        return signal.copy()
    sigma = math.sqrt(np.sum(signal**2) / (signal.size * snr))
    return signal + sigma * rng.standard_normal(signal.shape)


def simulate_images(model: VolumeModel, orientations, ctfs, radial: RadialGrid, sphere: SphereGrid,
                    npix: int = 100) -> np.ndarray:
    """Noise-free images for a batch of orientations ``(B, 3)`` and CTFs."""
    ori = np.atleast_2d(np.asarray(orientations, dtype=float))
    if model.nr != radial.nr:
        raise SimulationError("model and radial grid disagree on the shells")
    sc = central_slice_coeffs(model, ori[:, 0], ori[:, 1], sphere.nphi)
    nmax = (sc.shape[-1] - 1) // 2
    ns = np.arange(-nmax, nmax + 1)
    # in-plane rotation: M(k, psi) = C S(k, psi + gamma)
    sc = sc * np.exp(1j * ns[None, None, :] * ori[:, 2][:, None, None])
    ctf = np.stack([eval_ctf(c, radial.k_values) for c in ctfs])  # (B, nr)
    sc = sc * ctf[:, :, None]
    dc = np.array([eval_ctf(c, 0.0) for c in ctfs]) * dc_value(model)
    return pixels_from_ring_coeffs(sc, radial.k_values, radial.dk, npix, dc=dc)


def simulate_image(model: VolumeModel, ori: Orientation, ctf: CtfParams | None, snr: float, npix: int,
                   rng: np.random.Generator, radial: RadialGrid, sphere: SphereGrid) -> PixelImage:
    """One projection image, optionally noisy."""
    clean = simulate_images(model, [ori.as_tuple()], [ctf], radial, sphere, npix)[0]
    z = ctf.defocus if ctf is not None else float("nan")
    return PixelImage(add_noise(clean, snr, rng), z, ori)


def simulate_stack(model: VolumeModel, M: int, snr: float, seed: int, radial: RadialGrid, sphere: SphereGrid,
                   npix: int = 100, D: float | None = None, ctf: bool | CtfParams = True, batch: int = 64,
                   orientations=None) -> ParticleStack:
    """``M`` images at random orientations with random defocus and noise.

    Image ``m`` draws its orientation, defocus and noise, in that order, from
    ``image_rng(seed, m)``, so any subset of the stack can be regenerated
    independently. ``ctf=False`` disables the CTF (defocus stored as NaN);
    a :class:`CtfParams` instance sets the constants other than defocus.
    ``orientations`` overrides the random draw. ``D`` (Angstrom per unit
    length) sets the CTF scale and is required when the CTF is on, unless
    ``ctf`` carries it.
    """
    if M < 1:
        raise SimulationError("need at least one image")
    if isinstance(ctf, CtfParams):
        base = ctf if D is None else replace(ctf, D=D)
    elif ctf is False:
        base = CtfParams(D=1.0 if D is None else D)
    elif D is None:
        raise SimulationError("D is required to scale the CTF")
    else:
        base = CtfParams(D=D)
    rngs = [image_rng(seed, m) for m in range(M)]
    ori = np.empty((M, 3))
    zs = np.full(M, np.nan)
    ctfs = []
    for m, r in enumerate(rngs):
        o = sample_orientation(r)
        ori[m] = o.as_tuple() if orientations is None else orientations[m]
        if ctf is False:
            ctfs.append(None)
        else:
            zs[m] = random_defocus(r)
            ctfs.append(base.with_defocus(zs[m]))
    pix = np.empty((M, npix, npix))
    for s in range(0, M, batch):
        sl = slice(s, s + batch)
        pix[sl] = simulate_images(model, ori[sl], ctfs[sl], radial, sphere, npix)
    for m, r in enumerate(rngs):
        pix[m] = add_noise(pix[m], snr, r)
    return ParticleStack(pix, zs, ori, base.D)


def stack_ctfs(stack: ParticleStack, base: CtfParams | None = None) -> list[CtfParams | None]:
    """Per-image CTFs; images with NaN defocus get the identity filter."""
    base = base or CtfParams(D=stack.D)
    return [None if not np.isfinite(z) else base.with_defocus(z) for z in stack.defocus]


def projection_oracle(centers, sigmas, ori: Orientation, npix: int, nz: int = 400) -> np.ndarray:
    """Line integral ``int f(Q (x, y, z)) dz`` of a unit-peak Gaussian sum by
    brute-force trapezoid quadrature in ``z`` on [-sqrt 3, sqrt 3]."""
    Q = rotation_matrix(*ori.as_tuple())
    x = cube_axis(npix)
    z = np.linspace(-math.sqrt(3), math.sqrt(3), nz)
    dz = z[1] - z[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    out = np.zeros((npix, npix))
    for c, s in zip(np.atleast_2d(centers), np.atleast_1d(sigmas)):
        u = Q.T @ c  # centre in image coordinates
        r2 = (X - u[0]) ** 2 + (Y - u[1]) ** 2
        line = np.exp(-0.5 * (z - u[2]) ** 2 / s**2).sum() * dz
        out += np.exp(-0.5 * r2 / s**2) * line
    return out
