import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from freqmarch.optics import CtfParams
from freqmarch.phantom import PhantomSpec, build_truth_model
from freqmarch.simulate import (Orientation, ParticleStack, PolarImage, SimulationError, add_noise,
                                central_slice_coeffs, dc_value, euler_from_matrix, image_to_polar,
                                pixels_from_ring_coeffs, projection_oracle, ring_coeffs_from_values,
                                ring_values_from_coeffs, rotation_matrix, sample_orientation, simulate_images,
                                simulate_stack, slice_directions, stack_ctfs)
from freqmarch.sphgrid import build_grids

angles = st.tuples(st.floats(0.01, math.pi - 0.01), st.floats(0, 2 * math.pi - 1e-9),
                   st.floats(0, 2 * math.pi - 1e-9))


@given(angles)
def test_euler_round_trip(a):
    R = rotation_matrix(*a)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)
    np.testing.assert_allclose(rotation_matrix(*euler_from_matrix(R).as_tuple()), R, atol=1e-9)


def test_euler_at_pole():
    R = rotation_matrix(0.0, 1.0, 0.5)
    np.testing.assert_allclose(rotation_matrix(*euler_from_matrix(R).as_tuple()), R, atol=1e-12)


@given(angles, st.floats(0, 2 * math.pi))
def test_slice_directions_are_rotated_xy_plane(a, psi):
    u = slice_directions(a[0], a[1], psi)
    R = rotation_matrix(a[0], a[1], 0.0)
    np.testing.assert_allclose(u, R @ [math.cos(psi), math.sin(psi), 0.0], atol=1e-12)
    assert abs(u @ (R @ [0, 0, 1.0])) < 1e-12


def test_orientation_validation():
    with pytest.raises(SimulationError):
        Orientation(4.0, 0.0, 0.0)
    with pytest.raises(SimulationError):
        Orientation(1.0, 7.0, 0.0)


def test_orientation_sampling_is_uniform():
    rng = np.random.default_rng(0)
    a = np.array([sample_orientation(rng).as_tuple() for _ in range(20000)])
    # Haar measure: cos(alpha) uniform; moments 0 and 1/3
    assert abs(np.mean(np.cos(a[:, 0]))) < 0.02
    assert np.mean(np.cos(a[:, 0]) ** 2) == pytest.approx(1 / 3, abs=0.01)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_ring_coefficient_round_trip(seed):
    rng = np.random.default_rng(seed)
    ks = np.array([2.0, 4.0, 6.0])
    c = ring_coeffs_from_values(rng.standard_normal((3, 24)) + 0j, ks)
    back = ring_coeffs_from_values(ring_values_from_coeffs(c, 24), ks)
    np.testing.assert_allclose(back, c, atol=1e-13)
    shift = rng.uniform(0, 2 * np.pi)
    sv = ring_values_from_coeffs(c, 24, shift)
    ns = np.arange(-8, 9)
    np.testing.assert_allclose(ring_coeffs_from_values(sv, ks), c * np.exp(1j * ns * shift), atol=1e-13)


def test_too_few_ring_samples():
    with pytest.raises(SimulationError):
        ring_coeffs_from_values(np.zeros((1, 10)), [6.0])


def test_polar_transform_of_gaussian():
    # I(x) = exp(-|x|^2 / 2 s^2)  <->  2 pi s^2 exp(-k^2 s^2 / 2)
    s, npix = 0.12, 100
    x = (np.arange(npix) + 0.5) * 2 / npix - 1
    X, Y = np.meshgrid(x, x, indexing="ij")
    pol = image_to_polar(np.exp(-(X**2 + Y**2) / (2 * s * s)), np.arange(2.0, 31, 2), 72)
    exact = 2 * np.pi * s * s * np.exp(-0.5 * pol.ks**2 * s * s)
    np.testing.assert_allclose(pol.rings, np.broadcast_to(exact[:, None], pol.rings.shape), atol=1e-10)
    assert np.max(np.abs(pol.coeffs[:, np.arange(pol.coeffs.shape[1]) != pol.nmax])) < 1e-10


def test_polar_batch_matches_single(rng):
    pix = rng.standard_normal((3, 32, 32))
    ks = np.array([2.0, 4.0])
    batch = image_to_polar(pix, ks, 16)
    np.testing.assert_allclose(batch[1].coeffs, image_to_polar(pix[1], ks, 16).coeffs, atol=1e-12)
    assert len(batch) == 3 and batch.restrict(2.0).nr == 1


def test_slice_coefficients_of_centred_gaussian():
    radial, sphere = build_grids(10.0)
    model = build_truth_model(PhantomSpec(np.zeros((1, 3)), [0.1]), radial, sphere)
    sc = central_slice_coeffs(model, [0.3, 2.0], [1.0, 4.0], sphere.nphi)
    nmax = sc.shape[-1] // 2
    exact = (2 * np.pi) ** 1.5 * 0.1**3 * np.exp(-0.5 * (radial.k_values * 0.1) ** 2)
    np.testing.assert_allclose(sc[:, :, nmax].real, np.broadcast_to(exact, (2, radial.nr)), rtol=1e-10)
    assert dc_value(model) == pytest.approx((2 * np.pi) ** 1.5 * 0.1**3, rel=1e-4)


def test_projection_slice_consistency_small():
    spec = PhantomSpec(np.array([[0.2, -0.1, 0.05], [-0.15, 0.2, -0.1], [0.0, 0.0, 0.25]]), [0.08, 0.1, 0.07])
    radial, sphere = build_grids(40.0)
    model = build_truth_model(spec, radial, sphere)
    ori = Orientation(1.1, 2.3, 0.7)
    img = simulate_images(model, [ori.as_tuple()], [None], radial, sphere, 64)[0]
    ref = projection_oracle(spec.centers, spec.sigmas, ori, 64)
    assert np.linalg.norm(img - ref) / np.linalg.norm(ref) <= 1e-2


def test_synthesis_inverts_polar_transform():
    # pixels -> polar -> pixels recovers a band-limited image
    s = 0.15
    x = (np.arange(64) + 0.5) * 2 / 64 - 1
    X, Y = np.meshgrid(x, x, indexing="ij")
    img = np.exp(-((X - 0.1) ** 2 + (Y + 0.2) ** 2) / (2 * s * s))
    ks = np.arange(1.0, 41, 1.0)
    pol = image_to_polar(img, ks, 2 * (42 + 60))
    back = pixels_from_ring_coeffs(pol.coeffs, ks, 1.0, 64, dc=2 * np.pi * s * s)
    assert np.linalg.norm(back - img) / np.linalg.norm(img) <= 1e-3


def test_noise_level():
    rng = np.random.default_rng(0)
    sig = rng.standard_normal((100, 100))
    noisy = add_noise(sig, 0.1, rng)
    assert np.sum(sig**2) / np.sum((noisy - sig) ** 2) == pytest.approx(0.1, rel=0.05)
    np.testing.assert_array_equal(add_noise(sig, math.inf, rng), sig)
    with pytest.raises(SimulationError):
        add_noise(sig, 0.0, rng)


def test_stack_reproducible_and_ctf_flags(truth10, grids10):
    a = simulate_stack(truth10, 4, 0.5, 7, *grids10, npix=32, D=70.0)
    b = simulate_stack(truth10, 4, 0.5, 7, *grids10, npix=32, D=70.0)
    np.testing.assert_array_equal(a.pixels, b.pixels)
    # image m depends only on (seed, m)
    c = simulate_stack(truth10, 2, 0.5, 7, *grids10, npix=32, D=70.0)
    np.testing.assert_array_equal(c.pixels, a.pixels[:2])
    assert np.all((1e4 <= a.defocus) & (a.defocus <= 4e4))
    assert all(isinstance(x, CtfParams) and x.D == 70.0 for x in stack_ctfs(a))
    nc = simulate_stack(truth10, 2, math.inf, 7, *grids10, npix=32, ctf=False)
    assert np.all(np.isnan(nc.defocus)) and stack_ctfs(nc) == [None, None]


def test_stack_errors(truth10, grids10):
    with pytest.raises(SimulationError):
        simulate_stack(truth10, 0, 1.0, 0, *grids10, D=70.0)
    with pytest.raises(SimulationError):
        simulate_stack(truth10, 2, 1.0, 0, *grids10)


def test_particle_stack_validation():
    with pytest.raises(Exception):
        ParticleStack(np.zeros((2, 4, 4)), np.zeros(3), None, 1.0)
