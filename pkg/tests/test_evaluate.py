import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from freqmarch.evaluate import (fit_error_vs_M, model_to_cube, project_so3, relative_l2_error,
                                rotate_model, evaluate_reconstruction)
from freqmarch.phantom import density_on_cube
from freqmarch.sphgrid import DensityCube


def test_relative_error_basics(rng):
    a = DensityCube(rng.standard_normal((4, 4, 4)))
    assert relative_l2_error(a, a) == 0
    b = DensityCube(2 * a.values)
    assert relative_l2_error(a, b) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        relative_l2_error(a, DensityCube(np.zeros((4, 4, 4))))
    with pytest.raises(ValueError):
        relative_l2_error(a, DensityCube(a.values, D=2.0))
    with pytest.raises(ValueError):
        relative_l2_error(a, DensityCube(np.ones((3, 3, 3))))


def test_project_so3(rng):
    R = Rotation.random(random_state=1).as_matrix()
    np.testing.assert_allclose(project_so3(R), R, atol=1e-12)
    P = project_so3(R + 0.1 * rng.standard_normal((3, 3)))
    np.testing.assert_allclose(P @ P.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(P) == pytest.approx(1.0)


def test_rotate_model_composes(truth10, grids10):
    _, sphere = grids10
    A = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
    B = Rotation.from_rotvec([-0.1, 0.4, 0.2]).as_matrix()
    two = rotate_model(rotate_model(truth10, A, sphere), B, sphere)
    one = rotate_model(truth10, B @ A, sphere)
    for c1, c2 in zip(two.coeffs, one.coeffs):
        np.testing.assert_allclose(c1, c2, atol=1e-8 * np.abs(c2).max())
    ident = rotate_model(truth10, np.eye(3), sphere)
    for c1, c2 in zip(ident.coeffs, truth10.coeffs):
        np.testing.assert_allclose(c1, c2, atol=1e-12)


def test_model_cube_matches_band_limited_density(truth30, grids30, blobs):
    # the kmax = 30 cube of wide blobs is close to the real-space density
    cube = model_to_cube(truth30, *grids30, n=32, D=blobs.D)
    assert relative_l2_error(cube, density_on_cube(blobs, 32)) <= 0.05


@pytest.mark.parametrize("mirror", [False, True])
def test_alignment_recovers_rotated_copy(truth10, grids10, mirror):
    radial, sphere = grids10
    H = Rotation.from_rotvec([0.7, 1.1, -0.4]).as_matrix()
    rec = rotate_model(truth10, H, sphere)
    if mirror:
        rec = rec.mirrored()
    rep = evaluate_reconstruction(rec, truth10, radial, sphere, n=24)
    assert rep.epsilon <= 1e-3
    assert rep.mirrored is mirror
    lines = rep.to_text().splitlines()
    assert lines[0].startswith("epsilon:") and lines[4] == f"mirrored: {int(mirror)}"


def test_unaligned_error_of_identical_models(truth10, grids10):
    rep = evaluate_reconstruction(truth10, truth10, *grids10, n=16, align=False)
    assert rep.epsilon == 0.0


def test_fit_error_vs_M():
    Ms = [500, 1000, 2000, 4000]
    pts = [(M, np.sqrt(0.01 + 20.0 / M)) for M in Ms for _ in range(3)]
    a0, a1 = fit_error_vs_M(pts)
    assert a0 == pytest.approx(0.01) and a1 == pytest.approx(20.0)
    with pytest.raises(ValueError):
        fit_error_vs_M([(500, 0.1), (500, 0.2)])
    with pytest.raises(ValueError):
        fit_error_vs_M([1, 2, 3])
