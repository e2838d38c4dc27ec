"""Frequency marching, the known-angles baseline and classical refinement."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .harmonics import VolumeModel
from .match import Assignment, MatchConfig, match_stack
from .reconstruct import SolveInfo, solve_all_shells
from .simulate import PolarImage
from .sphgrid import RadialGrid, SphereGrid
from .templates import AngleGrid, generate_templates

log = logging.getLogger(__name__)


class MarchingError(RuntimeError):
    """Least squares kept failing after ``f_rand`` reached its cap."""

    def __init__(self, msg, trace=None, model=None):
        super().__init__(msg)
        self.trace = trace
        self.model = model


@dataclass(frozen=True)
class MarchConfig:
    k1: float = 2.0
    f_rand: float = 0.02
    angle_change_threshold: float = 1e-3
    skip_stride: int = 5
    cg_double: int = 100
    cg_halve: int = 50
    f_rand_min: float = 1e-4
    f_rand_max: float = 0.5
    coarse_factor: int = 5
    cg_tol: float = 1e-6
    cg_max_iter: int = 100
    q_interp: int = 7
    oversample: float = 8.0
    init: str = "grid"
    seed: int = 0
    warmup_iterations: int = 0

    def __post_init__(self):
        if self.k1 <= 0 or self.skip_stride < 1:
            raise ValueError("k1 must be positive and skip_stride >= 1")
        if not (0 <= self.f_rand < 1):
            raise ValueError("f_rand must lie in [0, 1)")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be >= 0")
        if self.init not in ("grid", "continuous"):
            raise ValueError("init must be 'grid' or 'continuous'")


@dataclass
class StepRecord:
    step: int
    k: float
    mean_dangle: float
    f_rand: float
    cg_iterations: list
    seconds: float


@dataclass
class MarchTrace:
    steps: list = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        self.steps.append(rec)

    @property
    def band_limits(self) -> list[float]:
        return [s.k for s in self.steps]

    def to_text(self) -> str:
        lines = ["# step k mean_dangle frand cg_max seconds\n"]
        for s in self.steps:
            cg = max(s.cg_iterations) if s.cg_iterations else 0
            lines.append(f"{s.step} {s.k:g} {s.mean_dangle:.6g} {s.f_rand:.6g} {cg} {s.seconds:.3f}\n")
        return "".join(lines)


def _circ(d):
    d = np.mod(np.abs(d), 2 * np.pi)
    return np.minimum(d, 2 * np.pi - d)


def mean_angle_change(a, b) -> float:
    """Mean over images and the three Euler angles of the absolute circular
    difference, each wrapped to [0, pi]."""
    aa = a.angles() if isinstance(a, Assignment) else np.atleast_2d(a)
    bb = b.angles() if isinstance(b, Assignment) else np.atleast_2d(b)
    if aa.shape != bb.shape:
        raise ValueError("assignment sets differ in size")
    return float(np.mean(_circ(aa - bb)))


def _solve(polar, angles, ctfs, ks, sphere, cfg) -> tuple[VolumeModel, SolveInfo]:
    return solve_all_shells(polar, angles, ctfs, ks, sphere.nphi, cfg.cg_tol, cfg.cg_max_iter,
                            cfg.q_interp, cfg.oversample)


def _random_start(grid: AngleGrid, M: int, cfg: MarchConfig, rng) -> np.ndarray:
    if cfg.init == "grid":
        return Assignment.random(grid, M, rng).angles()
    return np.stack([np.arccos(rng.uniform(-1, 1, M)), rng.uniform(0, 2 * np.pi, M),
                     rng.uniform(0, 2 * np.pi, M)], axis=1)


def frequency_march(polar: PolarImage, ctfs, radial: RadialGrid, sphere: SphereGrid, cfg: MarchConfig = MarchConfig(),
                    callback=None) -> tuple[VolumeModel, MarchTrace]:
    """Ab initio reconstruction by marching the band limit from ``k1`` to
    ``radial.kmax``.

    Step 0 fits the shells ``k <= k1`` to uniformly random orientations.
    Each later step matches every image against templates of the current
    model on ``[0, k_i]`` and refits ``[0, k_next]``, where ``k_next`` is the
    next shell, or ``skip_stride`` shells further when the mean angle change
    fell below ``angle_change_threshold``. When some shell's CG needs
    ``cg_double`` iterations, ``f_rand`` is doubled and the step (matching and
    least squares) is repeated; when all shells need fewer than ``cg_halve``
    it is halved for the next step.
    """
    if polar.coeffs.ndim != 3 or polar.coeffs.shape[0] == 0:
        raise ValueError("need a non-empty batch of polar images")
    M = polar.coeffs.shape[0]
    ks = radial.k_values
    start = np.flatnonzero(ks <= cfg.k1 + 1e-9)
    if start.size == 0:
        raise ValueError(f"k1={cfg.k1} is below the first shell {ks[0]}")
    grid = AngleGrid.from_sphere(sphere)
    rng = np.random.default_rng(cfg.seed)
    trace = MarchTrace()
    f_rand = cfg.f_rand

    t0 = time.perf_counter()
    i = int(start[-1])
    angles = _random_start(grid, M, cfg, rng)
    model, info = _solve(polar, angles, ctfs, ks[:i + 1], sphere, cfg)
    trace.append(StepRecord(0, float(ks[i]), math.nan, f_rand, info.iterations.tolist(),
                            time.perf_counter() - t0))
    step = 0
    for _ in range(cfg.warmup_iterations):
        # deterministic alternation at the starting band before marching
        step += 1
        t0 = time.perf_counter()
        bank = generate_templates(model, grid, ks[i])
        assign = match_stack(polar, bank, ctfs, MatchConfig(0.0, cfg.coarse_factor, ks[i]), radial.dk,
                             cfg.seed, step)
        new_angles = assign.angles()
        dangle = mean_angle_change(angles, new_angles)
        model, info = _solve(polar, new_angles, ctfs, ks[:i + 1], sphere, cfg)
        angles = new_angles
        trace.append(StepRecord(step, float(ks[i]), dangle, 0.0, info.iterations.tolist(),
                                time.perf_counter() - t0))
        if callback is not None:
            callback(step, model, assign)
        if dangle < cfg.angle_change_threshold:
            break
    last = radial.nr - 1
    while i < last:
        step += 1
        t0 = time.perf_counter()
        bank = generate_templates(model, grid, ks[i])
        while True:
            mcfg = MatchConfig(f_rand, cfg.coarse_factor, ks[i])
            assign = match_stack(polar, bank, ctfs, mcfg, radial.dk, cfg.seed, step)
            new_angles = assign.angles()
            dangle = mean_angle_change(angles, new_angles)
            stride = cfg.skip_stride if dangle < cfg.angle_change_threshold else 1
            nxt = min(i + stride, last)
            new_model, info = _solve(polar, new_angles, ctfs, ks[:nxt + 1], sphere, cfg)
            if info.max_iterations < cfg.cg_double:
                break
            if f_rand >= cfg.f_rand_max:
                trace.append(StepRecord(step, float(ks[nxt]), dangle, f_rand, info.iterations.tolist(),
                                        time.perf_counter() - t0))
                raise MarchingError(f"CG did not converge at k={ks[nxt]} with f_rand at its cap",
                                    trace, new_model)
            f_rand = min(2 * f_rand if f_rand > 0 else cfg.f_rand_min, cfg.f_rand_max)
            log.info("step %d: CG hit %d iterations, f_rand -> %g", step, info.max_iterations, f_rand)
        trace.append(StepRecord(step, float(ks[nxt]), dangle, f_rand, info.iterations.tolist(),
                                time.perf_counter() - t0))
        log.info("step %d: k=%g dangle=%.3g f_rand=%g cg=%d", step, ks[nxt], dangle, f_rand,
                 info.max_iterations)
        if info.max_iterations < cfg.cg_halve and f_rand > 0:
            f_rand = max(f_rand / 2, cfg.f_rand_min)
        angles, model, i = new_angles, new_model, nxt
        if callback is not None:
            callback(step, model, assign)
    return model, trace


def known_angles_baseline(polar: PolarImage, orientations, ctfs, radial: RadialGrid, sphere: SphereGrid,
                          cfg: MarchConfig = MarchConfig()) -> tuple[VolumeModel, SolveInfo]:
    """One least-squares fit at full band with the true orientations."""
    if orientations is None or not np.all(np.isfinite(orientations)):
        raise ValueError("true orientations absent")
    return _solve(polar, np.asarray(orientations), ctfs, radial.k_values, sphere, cfg)


def classical_refinement(polar: PolarImage, ctfs, radial: RadialGrid, sphere: SphereGrid, init_model: VolumeModel,
                         n_iters: int, cfg: MarchConfig = MarchConfig()) -> tuple[VolumeModel, Assignment]:
    """Fixed-band alternation: match against the current model at full band,
    refit all shells; ``n_iters`` further rounds after the first."""
    grid = AngleGrid.from_sphere(sphere)
    model = init_model
    kmax = radial.kmax
    mcfg = MatchConfig(0.0, cfg.coarse_factor, kmax)
    for it in range(n_iters + 1):
        bank = generate_templates(model, grid, kmax)
        assign = match_stack(polar, bank, ctfs, mcfg, radial.dk, cfg.seed, it)
        model, _ = _solve(polar, assign.angles(), ctfs, radial.k_values, sphere, cfg)
    return model, assign
