"""Acceptance criteria at desk scale.

Every test records one ``criterion N: PASS|FAIL|SKIP ...`` line, printed
in the terminal summary, before asserting. Tolerances are pinned below.
"""
import math
import os
import time

import numpy as np
import pytest

from freqmarch.evaluate import evaluate_reconstruction
from freqmarch.harmonics import analyze_on_regular_grid, degree_for_shell, eval_on_regular_grid, shell_transform
from freqmarch.march import MarchConfig, frequency_march, known_angles_baseline
from freqmarch.match import MatchConfig, best_gamma, brute_force_match, match_image, match_stack
from freqmarch.optics import CtfParams, random_defocus
from freqmarch.phantom import PhantomSpec, blob_phantom, build_truth_model
from freqmarch.simulate import (Orientation, PolarImage, image_to_polar, rotation_matrix, simulate_images,
                                simulate_stack, stack_ctfs)
from freqmarch.sphgrid import build_grids
from freqmarch.templates import AngleGrid, generate_templates

from conftest import ACCEPTANCE

TOL_ADJOINT = 1e-12
TOL_ROUNDTRIP = 1e-10
TOL_SLICE = 1e-2
SELF_SCORE = 0.999
TOL_KNOWN = 0.05
TOL_GAP = 0.05
MIN_MARCH_SUCCESSES = 4


def record(n, ok, detail):
    ACCEPTANCE.append(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
    print(ACCEPTANCE[-1])


@pytest.fixture(scope="module")
def default_grids():
    return build_grids(70.0)


@pytest.fixture(scope="module")
def phantom8():
    # asymmetric 8-Gaussian phantom used by criteria 7 to 10
    return blob_phantom(8, seed=1, radius=0.45, sigma_range=(0.09, 0.11), D=70.0)


@pytest.fixture(scope="module")
def desk(phantom8):
    radial, sphere = build_grids(30.0, 2.0)
    return radial, sphere, build_truth_model(phantom8, radial, sphere)


def baseline_eps(truth, radial, sphere, M, snr, seed):
    st = simulate_stack(truth, M, snr, seed, radial, sphere, D=70.0)
    pol = image_to_polar(st.pixels, radial.k_values, sphere.nphi)
    model, _ = known_angles_baseline(pol, st.orientations, stack_ctfs(st), radial, sphere)
    return evaluate_reconstruction(model, truth, radial, sphere, n=100, align=False).epsilon, st, pol


# ----------------------------------------------------------------- 1, 2

def test_criterion_01_adjoint(default_grids):
    _, sphere = default_grids
    rng = np.random.default_rng(1)
    worst = 0.0
    for k in (2.0, 20.0, 70.0):
        p = degree_for_shell(k)
        S = shell_transform(p, sphere.ntheta, sphere.nphi)
        for _ in range(100):
            c = rng.standard_normal((p + 1) ** 2) + 1j * rng.standard_normal((p + 1) ** 2)
            v = rng.standard_normal((sphere.ntheta, sphere.nphi)) + 1j * rng.standard_normal((sphere.ntheta, sphere.nphi))
            Sc = S.evaluate(c)
            err = abs(np.vdot(v, Sc) - np.vdot(S.adjoint(v), c)) / (np.linalg.norm(Sc) * np.linalg.norm(v))
            worst = max(worst, err)
    ok = worst <= TOL_ADJOINT
    record(1, ok, f"max relative adjoint defect {worst:.2e} (tol {TOL_ADJOINT:g})")
    assert ok


def test_criterion_02_roundtrip(default_grids):
    _, sphere = default_grids
    rng = np.random.default_rng(2)
    worst = 0.0
    for p in (0, 1, 5, 20, 47, 72):
        c = rng.standard_normal((p + 1) ** 2) + 1j * rng.standard_normal((p + 1) ** 2)
        back = analyze_on_regular_grid(eval_on_regular_grid(c, sphere), sphere, p)
        worst = max(worst, np.linalg.norm(back - c) / np.linalg.norm(c))
    ok = worst <= TOL_ROUNDTRIP
    record(2, ok, f"max relative round-trip error {worst:.2e} up to p=72 (tol {TOL_ROUNDTRIP:g})")
    assert ok


# ----------------------------------------------------------------- 3

def line_integral(spec, ori, npix, nz=600):
    """Brute-force trapezoid quadrature of f(Q (x, y, z)) over z for every pixel."""
    Q = rotation_matrix(*ori.as_tuple())
    x = (np.arange(npix) + 0.5) * 2 / npix - 1
    z = np.linspace(-1.5, 1.5, nz)
    X, Y, Z = np.meshgrid(x, x, z, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1) @ Q.T
    dens = np.zeros(X.shape)
    for c, s in zip(spec.centers, spec.sigmas):
        dens += np.exp(-0.5 * np.sum((pts - c) ** 2, axis=-1) / s**2)
    return np.trapezoid(dens, z, axis=-1) if hasattr(np, "trapezoid") else np.trapz(dens, z, axis=-1)


def test_criterion_03_projection_slice():
    rng = np.random.default_rng(3)
    d = rng.standard_normal((5, 3))
    centers = 0.4 * d / np.linalg.norm(d, axis=1, keepdims=True) * rng.uniform(0.2, 1, (5, 1))
    spec = PhantomSpec(centers, rng.uniform(0.07, 0.12, 5))
    radial, sphere = build_grids(40.0)
    model = build_truth_model(spec, radial, sphere)
    worst = 0.0
    for ori in (Orientation(0.4, 1.3, 2.2), Orientation(2.0, 5.1, 0.3)):
        img = simulate_images(model, [ori.as_tuple()], [None], radial, sphere, 100)[0]
        ref = line_integral(spec, ori, 100)
        worst = max(worst, np.linalg.norm(img - ref) / np.linalg.norm(ref))
    ok = worst <= TOL_SLICE
    record(3, ok, f"relative L2 vs line-integral oracle {worst:.2e} (tol {TOL_SLICE:g})")
    assert ok


# ----------------------------------------------------------------- 4, 5, 6

def test_criterion_04_gamma_search():
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(1000):
        N = int(rng.integers(1, 40))
        ng = 2 * int(rng.integers(N + 1, 80))
        c = rng.standard_normal(2 * N + 1) + 1j * rng.standard_normal(2 * N + 1)
        ns = np.arange(-N, N + 1)
        g = np.array([np.sum(c * np.exp(-1j * ns * 2 * np.pi * l / ng)).real for l in range(ng)])
        l, _, val = best_gamma(c, ng)
        if not (l == int(np.argmax(g)) or g[l] >= g.max() - 1e-12 * np.abs(c).sum()):
            bad += 1
    record(4, bad == 0, f"{bad}/1000 disagreements with brute force")
    assert bad == 0


def test_criterion_05_match_oracle(phantom8):
    radial, sphere = build_grids(10.0)
    truth = build_truth_model(phantom8, radial, sphere)
    bank = generate_templates(truth, AngleGrid.from_sphere(sphere), 10.0)
    st = simulate_stack(truth, 50, 0.5, 5, radial, sphere, npix=48, D=70.0)
    pol = image_to_polar(st.pixels, radial.k_values, sphere.nphi)
    ctfs = stack_ctfs(st)
    bad = 0
    for m in range(50):
        a = match_image(pol[m], bank, ctfs[m], MatchConfig(0.0, 1), radial.dk)
        (i, j, l), s = brute_force_match(pol[m], bank, ctfs[m], radial.dk)
        if (a.i[0], a.j[0], a.l[0]) != (i, j, l) or abs(a.score[0] - s) > 1e-10:
            bad += 1
    record(5, bad == 0, f"{bad}/50 images differ from exhaustive search")
    assert bad == 0


def test_criterion_06_self_matching(desk):
    radial, sphere, truth = desk
    grid = AngleGrid.from_sphere(sphere)
    bank = generate_templates(truth, grid, radial.kmax)
    rng = np.random.default_rng(6)
    idx = np.stack([rng.integers(0, n, 200) for n in grid.shape], axis=1)
    ang = np.stack([grid.alphas[idx[:, 0]], grid.betas[idx[:, 1]], grid.gammas[idx[:, 2]]], axis=1)
    # default microscope constants, random defocus, lengths scaled by the phantom's D
    ctfs = [CtfParams(defocus=random_defocus(rng), D=70.0) for _ in range(200)]
    pix = simulate_images(truth, ang, ctfs, radial, sphere, 100)
    pol = image_to_polar(pix, radial.k_values, sphere.nphi)
    a = match_stack(pol, bank, ctfs, MatchConfig(0.0, 5), radial.dk)
    hit = np.all(np.stack([a.i, a.j, a.l], axis=1) == idx, axis=1)
    good = int(np.sum(hit & (a.score >= SELF_SCORE)))
    ok = good == 200
    record(6, ok, f"{good}/200 assigned their triple with score >= {SELF_SCORE} "
                  f"(min score {a.score.min():.5f})")
    assert ok


# ----------------------------------------------------------------- 7 to 10

def test_criterion_07_known_angles(desk):
    radial, sphere, truth = desk
    eps, _, _ = baseline_eps(truth, radial, sphere, 1000, math.inf, 7)
    ok = eps <= TOL_KNOWN
    record(7, ok, f"noise-free baseline eps {eps:.4f} (tol {TOL_KNOWN})")
    assert ok


def test_criterion_08_frequency_marching(desk):
    radial, sphere, truth = desk
    gaps = []
    for seed in range(1, 6):
        t0 = time.perf_counter()
        eb, st, pol = baseline_eps(truth, radial, sphere, 2000, 0.1, 100 + seed)
        model, _ = frequency_march(pol, stack_ctfs(st), radial, sphere, MarchConfig(seed=seed))
        ef = evaluate_reconstruction(model, truth, radial, sphere, n=100, seed=seed).epsilon
        gaps.append(ef - eb)
        print(f"  seed {seed}: marching eps {ef:.4f} known-angles eps {eb:.4f} "
              f"({time.perf_counter() - t0:.0f} s)", flush=True)
    wins = sum(g <= TOL_GAP for g in gaps)
    ok = wins >= MIN_MARCH_SUCCESSES
    record(8, ok, f"{wins}/5 runs within {TOL_GAP} of known angles "
                  f"(gaps {', '.join(f'{g:.3f}' for g in gaps)}; need {MIN_MARCH_SUCCESSES})")
    assert ok


def test_criterion_09_noise_monotone(desk):
    radial, sphere, truth = desk
    snrs = [math.inf, 0.5, 0.1, 0.05]
    eps = [baseline_eps(truth, radial, sphere, 1000, s, 9)[0] for s in snrs]
    ok = all(b >= a for a, b in zip(eps, eps[1:]))
    record(9, ok, "baseline eps over SNR inf/0.5/0.1/0.05: " + ", ".join(f"{e:.4f}" for e in eps))
    assert ok


def test_criterion_10_error_vs_M(desk):
    from freqmarch.evaluate import fit_error_vs_M

    radial, sphere, truth = desk
    Ms = [500, 1000, 2000, 4000]
    eps = {M: [baseline_eps(truth, radial, sphere, M, 0.05, 1000 * s + M)[0] for s in range(5)] for M in Ms}
    a0, a1 = fit_error_vs_M([(M, e) for M in Ms for e in eps[M]])
    med = np.array([np.median(np.square(eps[M])) for M in Ms])
    resid = float(np.mean((med - (a0 + a1 / np.array(Ms))) ** 2))
    spread = float(np.mean([np.var(np.square(eps[M]), ddof=1) for M in Ms]))
    ok = a1 > 0 and resid < spread
    record(10, ok, f"a0 {a0:.3e} a1 {a1:.3e}; fit residual {resid:.2e} vs inter-seed variance {spread:.2e}")
    assert ok


# ----------------------------------------------------------------- 11

REFERENCE_KNOWN_EPS = {"1aho": (25.0, 1.0, [0.04, 0.04, 0.05, 0.06])}


def test_criterion_11_full_scale_benchmark():
    """Optional full-scale run (kmax 70, M = 50000); see README."""
    pdb_dir = os.environ.get("FREQMARCH_PDB_DIR")
    if not os.environ.get("FREQMARCH_FULL_BENCHMARK") or not pdb_dir:
        ACCEPTANCE.append("criterion 11: SKIP optional full-scale benchmark "
                          "(set FREQMARCH_FULL_BENCHMARK=1 and FREQMARCH_PDB_DIR)")
        pytest.skip("optional full-scale benchmark")
    from freqmarch.phantom import parse_pdb

    D, b, expected = REFERENCE_KNOWN_EPS["1aho"]
    with open(os.path.join(pdb_dir, "1aho.pdb")) as fh:
        spec = PhantomSpec.from_atoms(parse_pdb(fh.read()), D, b)
    radial, sphere = build_grids(70.0)
    truth = build_truth_model(spec, radial, sphere)
    M = int(os.environ.get("FREQMARCH_BENCHMARK_M", 50000))
    eps = [baseline_eps(truth, radial, sphere, M, s, 11)[0] for s in (math.inf, 0.5, 0.1, 0.05)]
    ok = all(abs(e - x) <= 0.03 for e, x in zip(eps, expected))
    record(11, ok, "1AHO known-angles eps " + ", ".join(f"{e:.3f}" for e in eps)
           + " vs " + ", ".join(map(str, expected)) + " (tol 0.03)")
    assert ok
