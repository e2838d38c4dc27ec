"""Per-shell least squares for the spherical harmonic coefficients.

On shell ``k`` the data are the image rings rotated back by their in-plane
angle, ``d_(m,l) = M_m(k, psi_l - gamma_m)``, sitting at the sphere points
``slice_point(alpha_m, beta_m, psi_l)``. The model is ``d ~ C S f`` where
``S`` evaluates the expansion at those points. ``S`` is applied as
``T S_reg``: evaluation on an oversampled regular grid followed by sparse
local Lagrange interpolation. The directions do not depend on ``k``, so one
``T`` serves every shell, and all shells are iterated together (each with
its own CG scalars and stopping test).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps

from .harmonics import VolumeModel, degree_for_shell, ncoeff, shell_transform
from .interp import fine_grid_shape, interp_matrix
from .match import Assignment
from .optics import eval_ctf
from .simulate import PolarImage, ring_values_from_coeffs, slice_directions, to_spherical

log = logging.getLogger(__name__)


class ReconstructionError(ValueError):
    pass


@dataclass
class Interpolator:
    """Sparse ``T`` (points x fine grid) with its transpose and grid shape."""

    T: sps.csr_matrix
    TT: sps.csr_matrix
    ntheta: int
    nphi: int

    @classmethod
    def build(cls, theta, phi, pmax: int, q: int = 7, oversample: float = 8.0) -> "Interpolator":
        nt, nf = fine_grid_shape(pmax, oversample)
        T = interp_matrix(theta, phi, nt, nf, q)
        return cls(T, T.T.tocsr(), nt, nf)

    def apply(self, g: np.ndarray) -> np.ndarray:
        """``T @ g`` for complex ``g`` of shape ``(ngrid, ...)``."""
        return _real_sparse(self.T, g)

    def apply_t(self, v: np.ndarray) -> np.ndarray:
        return _real_sparse(self.TT, v)


def _real_sparse(A, x):
    # A is real: multiply the real and imaginary parts as one real block
    x = np.ascontiguousarray(x, dtype=complex)
    shp = x.shape
    xr = x.reshape(shp[0], -1).view(float)
    y = A @ xr
    return np.ascontiguousarray(y).view(complex).reshape((A.shape[0],) + shp[1:])


@dataclass
class ShellSystem:
    """Least-squares data of one shell.

    ``theta, phi`` are the ``M * nphi`` sample directions, ``rhs`` the data,
    ``ctf`` the real per-point CTF (constant along each image's ring) and
    ``interp`` the shared interpolation operator.
    """

    k: float
    theta: np.ndarray
    phi: np.ndarray
    rhs: np.ndarray
    ctf: np.ndarray
    interp: Interpolator

    @property
    def p(self) -> int:
        return degree_for_shell(self.k)

    @property
    def npoints(self) -> int:
        return len(self.rhs)


def sample_directions(assign_angles: np.ndarray, nphi: int) -> tuple[np.ndarray, np.ndarray]:
    """``(theta, phi)`` of ``slice_point(alpha_m, beta_m, psi_l)``, image-major."""
    a = np.atleast_2d(assign_angles)
    psi = 2 * np.pi * np.arange(nphi) / nphi
    u = slice_directions(a[:, 0:1], a[:, 1:2], psi[None, :])
    theta, phi = to_spherical(u)
    return theta.ravel(), phi.ravel()


def _angles(assignment) -> np.ndarray:
    return assignment.angles() if isinstance(assignment, Assignment) else np.atleast_2d(assignment)


def shell_rhs(polar: PolarImage, q: int, gammas: np.ndarray, nphi: int) -> np.ndarray:
    """``M_m(k_q, psi_l - gamma_m)`` by exact phase shift of the ring coefficients."""
    c = polar.coeffs[..., q, :]
    if c.ndim == 1:
        c = c[None]
    return ring_values_from_coeffs(c, nphi, shift=-np.asarray(gammas)).ravel()


def assemble_shell(polar: PolarImage, assignment, ctfs, k: float, nphi: int, interp: Interpolator | None = None,
                   q_interp: int = 7, oversample: float = 8.0) -> ShellSystem:
    """Data, CTF diagonal and interpolation operator for the shell ``k``."""
    ang = _angles(assignment)
    coeffs = polar.coeffs if polar.coeffs.ndim == 3 else polar.coeffs[None]
    M = coeffs.shape[0]
    if len(ang) != M or len(ctfs) != M:
        raise ReconstructionError("need one assignment and one CTF per image")
    hit = np.flatnonzero(np.abs(polar.ks - k) < 1e-9)
    if hit.size == 0:
        raise ReconstructionError(f"no ring data for shell k={k}")
    q = int(hit[0])
    theta, phi = sample_directions(ang, nphi)
    if interp is None:
        interp = Interpolator.build(theta, phi, degree_for_shell(k), q_interp, oversample)
    rhs = shell_rhs(PolarImage(polar.ks, None, coeffs), q, ang[:, 2], nphi)
    cv = np.array([float(eval_ctf(c, k)) for c in ctfs])
    return ShellSystem(float(k), theta, phi, rhs, np.repeat(cv, nphi), interp)


# ------------------------------------------------------------------ operators

def _grid_eval(c, p, interp):
    return shell_transform(p, interp.ntheta, interp.nphi).evaluate(c).ravel()


def _grid_adjoint(g, p, interp):
    return shell_transform(p, interp.ntheta, interp.nphi).adjoint(g.reshape(interp.ntheta, interp.nphi))


def apply_forward(sys: ShellSystem, c: np.ndarray) -> np.ndarray:
    """``C T S_reg c``."""
    c = np.asarray(c)
    if c.shape != (ncoeff(sys.p),):
        raise ReconstructionError(f"shell k={sys.k} needs {ncoeff(sys.p)} coefficients")
    return sys.ctf * sys.interp.apply(_grid_eval(c, sys.p, sys.interp))


def apply_adjoint(sys: ShellSystem, v: np.ndarray) -> np.ndarray:
    """``S_reg^H T^T C v`` under the plain Euclidean inner products."""
    return _grid_adjoint(sys.interp.apply_t(sys.ctf * np.asarray(v)), sys.p, sys.interp)


def apply_normal(sys: ShellSystem, c: np.ndarray) -> np.ndarray:
    return apply_adjoint(sys, apply_forward(sys, c))


# ------------------------------------------------------------------ CGLS

@dataclass
class SolveInfo:
    """Per-shell iteration counts, final relative normal residuals, histories
    of the data residual ``|d - A f|`` and the convergence flags."""

    ks: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    history: list = field(default_factory=list)

    @property
    def max_iterations(self) -> int:
        return int(self.iterations.max()) if len(self.iterations) else 0


def _cgls(systems: list[ShellSystem], tol: float, max_iter: int, ridge: float = 0.0):
    """CGLS on all shells in lockstep. Sharing ``T`` lets one sparse product
    serve every active shell per half-iteration."""
    nq = len(systems)
    interp = systems[0].interp
    ps = [s.p for s in systems]
    npts = systems[0].npoints

    def forward(cs, idx):
        g = np.stack([_grid_eval(cs[i], ps[i], interp) for i in idx], axis=1)
        v = interp.apply(g)
        return [systems[i].ctf * v[:, a] for a, i in enumerate(idx)]

    def adjoint(vs, idx):
        w = np.stack([systems[i].ctf * vs[a] for a, i in enumerate(idx)], axis=1)
        g = interp.apply_t(w)
        return [_grid_adjoint(g[:, a], ps[i], interp) for a, i in enumerate(idx)]

    for s in systems:
        if s.npoints != npts:
            raise ReconstructionError("shells must share the sample points")
    idx = list(range(nq))
    x = [np.zeros(ncoeff(p), dtype=complex) for p in ps]
    r = [s.rhs.astype(complex) for s in systems]
    sv = adjoint(r, idx)
    pv = [v.copy() for v in sv]
    gam = np.array([np.vdot(v, v).real for v in sv])
    norm0 = np.sqrt(gam)
    iters = np.zeros(nq, dtype=int)
    resid = np.zeros(nq)
    hist = [[float(np.linalg.norm(ri))] for ri in r]
    active = [i for i in idx if norm0[i] > 0]
    while active:
        qv = forward([pv[i] for i in range(nq)], active)
        for a, i in enumerate(active):
            den = np.vdot(qv[a], qv[a]).real + ridge * np.vdot(pv[i], pv[i]).real
            alpha = gam[i] / den
            x[i] += alpha * pv[i]
            r[i] -= alpha * qv[a]
            iters[i] += 1
            hist[i].append(float(np.linalg.norm(r[i])))
        snew = adjoint([r[i] for i in active], active)
        still = []
        for a, i in enumerate(active):
            s_i = snew[a] - ridge * x[i] if ridge else snew[a]
            gnew = np.vdot(s_i, s_i).real
            resid[i] = np.sqrt(gnew) / norm0[i]
            if resid[i] <= tol or iters[i] >= max_iter:
                continue
            pv[i] = s_i + (gnew / gam[i]) * pv[i]
            gam[i] = gnew
            still.append(i)
        active = still
    conv = resid <= tol
    return x, iters, resid, conv, hist


def solve_shell(sys: ShellSystem, tol: float = 1e-6, max_iter: int = 100, ridge: float = 0.0):
    """CG on the normal equations ``S^H C^2 S f = S^H C d``.

    Returns ``(coeffs, iterations, relative residual)`` where the residual
    is ``|A^H (d - A f)| / |A^H d|``; non-convergence is reported through
    the iteration count reaching ``max_iter``.
    """
    x, it, res, _, _ = _cgls([sys], tol, max_iter, ridge)
    return x[0], int(it[0]), float(res[0])


def solve_all_shells(polar: PolarImage, assignment, ctfs, ks, nphi: int, tol: float = 1e-6,
                     max_iter: int = 100, q_interp: int = 7, oversample: float = 8.0,
                     ridge: float = 0.0) -> tuple[VolumeModel, SolveInfo]:
    """Independent least-squares fits on the shells ``ks`` (a subset of the
    image shells) from images at the given orientations."""
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    ang = _angles(assignment)
    theta, phi = sample_directions(ang, nphi)
    interp = Interpolator.build(theta, phi, degree_for_shell(ks.max()), q_interp, oversample)
    systems = [assemble_shell(polar, ang, ctfs, k, nphi, interp) for k in ks]
    x, it, res, conv, hist = _cgls(systems, tol, max_iter, ridge)
    if not conv.all():
        log.info("CG hit max_iter=%d on shells %s", max_iter, ks[~conv].tolist())
    return VolumeModel(ks, x), SolveInfo(ks, it, res, conv, hist)
