"""Gaussian-sum phantoms from atomic coordinates, with closed-form Fourier
transforms."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .harmonics import VolumeModel, analyze_on_regular_grid, degree_for_shell
from .sphgrid import DensityCube, cube_axis, grid_kpoints

log = logging.getLogger(__name__)

# Angstrom; spans the 0.42-0.88 range quoted for protein atoms.
ATOMIC_RADII = {
    "H": 0.42,
    "C": 0.77,
    "N": 0.70,
    "O": 0.66,
    "S": 0.88,
    "P": 0.88,
    "SE": 1.17,
    "MG": 1.10,
    "NA": 1.10,
    "ZN": 1.10,
    "FE": 1.10,
    "CA": 1.15,
    "CL": 0.88,
}
DEFAULT_RADIUS = 0.7

# (D, blur) in Angstrom for the molecules used in the experiments
MOLECULE_SCALES = {
    "rubisco": (70.0, 2.5),
    "lipoxygenase-1": (60.0, 2.0),
    "neurotoxin": (25.0, 1.0),
}


class PdbFormatError(ValueError):
    pass


@dataclass
class AtomList:
    positions: np.ndarray  # (N, 3) Angstrom, centroid at the origin
    radii: np.ndarray  # (N,) Angstrom
    elements: list

    @property
    def count(self) -> int:
        return len(self.radii)


def _element(line: str) -> str:
    el = line[76:78].strip().upper()
    if el:
        return el
    name = line[12:16].strip().upper()
    return "".join(ch for ch in name if ch.isalpha())[:1]


def parse_pdb(text: str, hetatm: bool = True) -> AtomList:
    """Read ATOM (and optionally HETATM) records of the first model."""
    pos, els = [], []
    for line in text.splitlines():
        rec = line[:6]
        if rec.startswith("ENDMDL"):
            break
        if not (rec == "ATOM  " or (hetatm and rec == "HETATM")):
            continue
        try:
            xyz = [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        except ValueError as exc:
            raise PdbFormatError(f"bad coordinate columns in line: {line!r}") from exc
        pos.append(xyz)
        els.append(_element(line))
    if not pos:
        raise PdbFormatError("no ATOM/HETATM records found")
    radii = []
    unknown = set()
    for el in els:
        r = ATOMIC_RADII.get(el)
        if r is None:
            unknown.add(el)
            r = DEFAULT_RADIUS
        radii.append(r)
    if unknown:
        log.warning("unknown elements %s given radius %.2f A", sorted(unknown), DEFAULT_RADIUS)
    pos = np.array(pos)
    pos -= pos.mean(axis=0)
    return AtomList(pos, np.array(radii), els)


@dataclass
class PhantomSpec:
    """Sum of unit-peak isotropic Gaussians in numerical units."""

    centers: np.ndarray  # (N, 3)
    sigmas: np.ndarray  # (N,)
    D: float = 1.0

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.sigmas = np.broadcast_to(np.asarray(self.sigmas, dtype=float), (len(self.centers),)).copy()
        if self.D <= 0 or np.any(self.sigmas <= 0):
            raise ValueError("D and all widths must be positive")
        reach = self.support_radius()
        if reach > 1:
            log.warning("phantom reaches radius %.3f (centre + 4 sigma) beyond the unit ball", reach)

    @classmethod
    def from_atoms(cls, atoms: AtomList, D: float, blur: float) -> "PhantomSpec":
        if blur <= 0:
            raise ValueError("blur radius must be positive")
        sig = np.sqrt((0.5 * atoms.radii) ** 2 + blur**2) / D
        return cls(atoms.positions / D, sig, D)

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.centers, axis=1) + 4 * self.sigmas))

    def __add__(self, other: "PhantomSpec") -> "PhantomSpec":
        return PhantomSpec(np.vstack([self.centers, other.centers]),
                           np.concatenate([self.sigmas, other.sigmas]), self.D)


def gaussian_ft(spec: PhantomSpec, kpoints, chunk: int = 1 << 14) -> np.ndarray:
    """Exact transform ``sum (2 pi)^1.5 s^3 exp(-|k|^2 s^2 / 2) exp(i k.x)``."""
    kp = np.asarray(kpoints, dtype=float)
    shape = kp.shape[:-1]
    kp = kp.reshape(-1, 3)
    k2 = np.sum(kp * kp, axis=1)
    amp = (2 * np.pi) ** 1.5 * spec.sigmas**3
    out = np.zeros(len(kp), dtype=complex)
    step = max(1, chunk // max(1, len(spec.sigmas)))
    for s in range(0, len(kp), step):
        sl = slice(s, s + step)
        env = np.exp(-0.5 * np.outer(k2[sl], spec.sigmas**2))
        phase = np.exp(1j * kp[sl] @ spec.centers.T)
        out[sl] = (env * phase) @ amp
    return out.reshape(shape)


def build_truth_model(spec: PhantomSpec, radial, sphere) -> VolumeModel:
    """Sample the exact transform on the grid and fit each shell's expansion."""
    kp = grid_kpoints(radial, sphere)
    coeffs = []
    for q, k in enumerate(radial.k_values):
        vals = gaussian_ft(spec, kp[q])
        coeffs.append(analyze_on_regular_grid(vals, sphere, degree_for_shell(k)))
    return VolumeModel(radial.k_values.copy(), coeffs)


def density_on_cube(spec: PhantomSpec, n: int = 100) -> DensityCube:
    """Real-space Gaussian sum on the cell-centred ``n^3`` grid."""
    x = cube_axis(n)
    out = np.zeros((n, n, n))
    for s in range(0, len(spec.sigmas), 256):
        c = spec.centers[s:s + 256]
        sg = spec.sigmas[s:s + 256][:, None]
        g = [np.exp(-0.5 * ((x[None, :] - c[:, d:d + 1]) / sg) ** 2) for d in range(3)]
        out += np.einsum("ai,aj,ak->ijk", *g)
    return DensityCube(out, spec.D)


def blob_phantom(n_blobs: int = 8, seed: int = 0, radius: float = 0.55,
                 sigma_range=(0.07, 0.11), D: float = 70.0) -> PhantomSpec:
    """Random asymmetric cluster of Gaussian blobs inside the unit ball."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n_blobs, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.3, 1.0, n_blobs) ** (1 / 3)
    centers = d * r[:, None]
    centers -= centers.mean(axis=0)
    sig = rng.uniform(*sigma_range, n_blobs)
    return PhantomSpec(centers, sig, D)
