"""Alignment to ground truth and relative L2 errors."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from .harmonics import VolumeModel, analyze_on_regular_grid, degree_for_shell, eval_at_points, shell_transform
from .interp import fine_grid_shape, interp_matrix
from .match import MatchConfig, match_stack
from .simulate import Orientation, PolarImage, central_slice_coeffs, euler_from_matrix, rotation_matrix, \
    sample_orientation, to_spherical
from .sphgrid import DensityCube, RadialGrid, SphereGrid, inverse_fourier_volume, quadrature_weights_3d
from .templates import AngleGrid, generate_templates

log = logging.getLogger(__name__)


class AlignmentError(RuntimeError):
    pass


@dataclass
class ErrorReport:
    epsilon: float
    alignment: Orientation
    mirrored: bool
    n: int
    seconds: float

    def to_text(self) -> str:
        a = self.alignment
        return (f"epsilon: {self.epsilon:.6g}\nalignment_alpha: {a.alpha:.6g}\nalignment_beta: {a.beta:.6g}\n"
                f"alignment_gamma: {a.gamma:.6g}\nmirrored: {int(self.mirrored)}\nn: {self.n}\n"
                f"seconds: {self.seconds:.3f}\n")


def relative_l2_error(a: DensityCube, b: DensityCube) -> float:
    """``|a - b| / |b|`` over the cube samples."""
    if a.values.shape != b.values.shape:
        raise ValueError("cubes differ in resolution")
    if not np.isclose(a.D, b.D):
        raise ValueError("cubes differ in D")
    den = np.linalg.norm(b.values)
    if den == 0:
        raise ValueError("reference cube is zero")
    return float(np.linalg.norm(a.values - b.values) / den)


def model_to_cube(model: VolumeModel, radial: RadialGrid, sphere: SphereGrid, n: int = 100, D: float = 1.0,
                  method: str = "nufft") -> DensityCube:
    sub = radial.restrict(model.ks.max())
    if not np.allclose(sub.k_values, model.ks):
        raise ValueError("model shells do not match the radial grid")
    return inverse_fourier_volume(model.values_on_grid(sphere), sub, sphere, n, D, method)


# ------------------------------------------------------------------ rotation

def rotate_model(model: VolumeModel, H: np.ndarray, sphere: SphereGrid) -> VolumeModel:
    """Model of ``F'(v) = F(H^T v)``, refitted on every shell."""
    u = _grid_dirs(sphere)
    th, ph = to_spherical(u @ np.asarray(H))  # rows: H^T u
    out = []
    for k, c in zip(model.ks, model.coeffs):
        vals = eval_at_points(c, th, ph).reshape(sphere.ntheta, sphere.nphi)
        out.append(analyze_on_regular_grid(vals, sphere, degree_for_shell(k)))
    return VolumeModel(model.ks.copy(), out)


def _grid_dirs(sphere: SphereGrid) -> np.ndarray:
    st = np.sin(sphere.theta)[:, None]
    u = np.stack([st * np.cos(sphere.phi)[None, :], st * np.sin(sphere.phi)[None, :],
                  np.broadcast_to(sphere.mu[:, None], (sphere.ntheta, sphere.nphi))], axis=-1)
    return u.reshape(-1, 3)


def project_so3(A: np.ndarray) -> np.ndarray:
    """Closest rotation in the Frobenius norm (chordal L2 mean of rotations)."""
    U, _, Vt = np.linalg.svd(A)
    d = np.sign(np.linalg.det(U @ Vt))
    return U @ np.diag([1.0, 1.0, d]) @ Vt


class _Misfit:
    """Weighted squared difference between ``truth`` and a rotated ``recon``
    over the grid nodes, with the rotation applied by fine-grid interpolation."""

    def __init__(self, recon: VolumeModel, truth: VolumeModel, radial: RadialGrid, sphere: SphereGrid):
        pmax = max(recon.degrees)
        self.nt, self.nf = fine_grid_shape(pmax)
        self.fine = np.stack([shell_transform(degree_for_shell(k), self.nt, self.nf).evaluate(c).ravel()
                              for k, c in zip(recon.ks, recon.coeffs)], axis=1)
        sub = radial.restrict(recon.ks.max())
        self.w = quadrature_weights_3d(sub, sphere).reshape(sub.nr, -1).T
        self.ft = truth.restrict(recon.ks.max()).values_on_grid(sphere).reshape(sub.nr, -1).T
        self.u = _grid_dirs(sphere)
        self.norm = float(np.sum(self.w * np.abs(self.ft) ** 2))

    def __call__(self, H: np.ndarray) -> float:
        th, ph = to_spherical(self.u @ H)
        T = interp_matrix(th, ph, self.nt, self.nf)
        fr = T @ self.fine.real + 1j * (T @ self.fine.imag)
        return float(np.sum(self.w * np.abs(fr - self.ft) ** 2) / self.norm)


def probe_rotations(recon: VolumeModel, truth: VolumeModel, sphere: SphereGrid, n_probes: int,
                    rng: np.random.Generator) -> list[np.ndarray]:
    """Per-probe estimates ``H_p = Q_p R_p^T`` with ``F_recon(v) ~ F_truth(H_p v)``.

    ``Q_p`` is a random orientation of a noise-free truth projection and
    ``R_p`` the grid orientation that ``recon``'s templates assign to it.
    """
    grid = AngleGrid.from_sphere(sphere)
    bank = generate_templates(recon, grid, recon.ks.max())
    qs = [sample_orientation(rng) for _ in range(n_probes)]
    a = np.array([q.as_tuple() for q in qs])
    sc = central_slice_coeffs(truth.restrict(recon.ks.max()), a[:, 0], a[:, 1], sphere.nphi)
    ns = np.arange(-(sc.shape[-1] // 2), sc.shape[-1] // 2 + 1)
    sc = sc * np.exp(1j * ns[None, None, :] * a[:, 2][:, None, None])
    pol = PolarImage(bank.ks, None, sc)
    assign = match_stack(pol, bank, [None] * n_probes, MatchConfig(0.0, 1), 1.0)
    return [rotation_matrix(*q.as_tuple()) @ rotation_matrix(*r).T for q, r in zip(qs, assign.angles())]


def align_to_truth(recon: VolumeModel, truth: VolumeModel, radial: RadialGrid, sphere: SphereGrid,
                   n_probes: int = 10, rng: np.random.Generator | None = None,
                   refine: bool = True) -> tuple[VolumeModel, np.ndarray, float]:
    """Rotate ``recon`` onto ``truth``.

    The probe estimates are combined by their chordal mean; the start with
    the lowest Fourier misfit among the mean and the individual estimates is
    then refined by a continuous search over rotations. Returns the aligned
    model, the rotation ``H`` and the final relative misfit.
    """
    rng = rng or np.random.default_rng(0)
    Hs = probe_rotations(recon, truth, sphere, n_probes, rng)
    mean = np.mean(Hs, axis=0)
    if np.linalg.svd(mean, compute_uv=False)[-1] < 1e-3:
        raise AlignmentError("probe rotations do not agree on a common rotation")
    misfit = _Misfit(recon, truth, radial, sphere)
    starts = [project_so3(mean)] + Hs
    vals = [misfit(H) for H in starts]
    H0 = starts[int(np.argmin(vals))]
    best = min(vals)
    if refine:
        def obj(w):
            return misfit(H0 @ Rotation.from_rotvec(w).as_matrix())

        res = minimize(obj, np.zeros(3), method="Powell",
                       options={"xtol": 1e-5, "ftol": 1e-10, "maxfev": 600})
        if res.fun < best:
            H0, best = H0 @ Rotation.from_rotvec(res.x).as_matrix(), float(res.fun)
    return rotate_model(recon, H0, sphere), H0, best


def evaluate_reconstruction(recon: VolumeModel, truth: VolumeModel, radial: RadialGrid, sphere: SphereGrid,
                            n: int = 100, n_probes: int = 10, seed: int = 0, align: bool = True,
                            D: float = 1.0) -> ErrorReport:
    """Relative L2 error on the ``n^3`` cube after alignment; both ``recon``
    and its point reflection are tried and the better one is reported."""
    t0 = time.perf_counter()
    truth = truth.restrict(recon.ks.max())
    tcube = model_to_cube(truth, radial, sphere, n, D)
    best = None
    cands = [(recon, False), (recon.mirrored(), True)] if align else [(recon, False)]
    for cand, mirrored in cands:
        if align:
            try:
                aligned, H, _ = align_to_truth(cand, truth, radial, sphere, n_probes,
                                               np.random.default_rng(seed))
            except AlignmentError as exc:
                log.warning("alignment failed (%s)", exc)
                continue
        else:
            aligned, H = cand, np.eye(3)
        eps = relative_l2_error(model_to_cube(aligned, radial, sphere, n, D), tcube)
        if best is None or eps < best[0]:
            best = (eps, H, mirrored)
    if best is None:
        raise AlignmentError("no candidate could be aligned")
    eps, H, mirrored = best
    return ErrorReport(eps, euler_from_matrix(H), mirrored, n, time.perf_counter() - t0)


def fit_error_vs_M(points) -> tuple[float, float]:
    """Least-squares fit of ``eps^2 = a0 + a1 / M`` to per-``M`` medians."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (M, epsilon) pairs")
    Ms = np.unique(pts[:, 0])
    if len(Ms) < 2:
        raise ValueError("need at least two distinct M")
    med = np.array([np.median(pts[pts[:, 0] == m, 1] ** 2) for m in Ms])
    A = np.stack([np.ones_like(Ms), 1 / Ms], axis=1)
    (a0, a1), *_ = np.linalg.lstsq(A, med, rcond=None)
    return float(a0), float(a1)
