import math

import numpy as np
import pytest

from freqmarch.march import (MarchConfig, MarchingError, classical_refinement, frequency_march,
                             known_angles_baseline, mean_angle_change)
from freqmarch.simulate import PolarImage, image_to_polar, simulate_stack, stack_ctfs
from freqmarch.sphgrid import build_grids


@pytest.fixture(scope="module")
def data(truth10, grids10):
    radial, sphere = grids10
    st = simulate_stack(truth10, 60, np.inf, 4, radial, sphere, npix=40, ctf=False)
    return st, image_to_polar(st.pixels, radial.k_values, sphere.nphi), stack_ctfs(st)


def test_mean_angle_change_wraps():
    a = np.array([[0.1, 6.2, 0.0]])
    b = np.array([[0.1, 0.1, 2 * np.pi]])
    assert mean_angle_change(a, b) == pytest.approx((2 * np.pi - 6.1) / 3)
    with pytest.raises(ValueError):
        mean_angle_change(a, np.zeros((2, 3)))


def test_march_reaches_kmax_and_is_deterministic(data, grids10):
    st, pol, ctfs = data
    m1, t1 = frequency_march(pol, ctfs, *grids10, MarchConfig(seed=3))
    m2, t2 = frequency_march(pol, ctfs, *grids10, MarchConfig(seed=3))
    assert m1.ks.max() == grids10[0].kmax
    assert np.all(np.diff(t1.band_limits) >= 0) and t1.band_limits[-1] == grids10[0].kmax
    for a, b in zip(m1.coeffs, m2.coeffs):
        np.testing.assert_array_equal(a, b)
    lines = t1.to_text().splitlines()
    assert lines[0].startswith("#") and len(lines) == len(t1.steps) + 1
    assert lines[1].split()[2] == "nan"
    assert all(len(l.split()) == 6 for l in lines[1:])


def test_small_angle_change_takes_long_strides(data, grids10):
    st, pol, ctfs = data
    _, tr = frequency_march(pol, ctfs, *grids10, MarchConfig(angle_change_threshold=10.0))
    assert tr.band_limits == [2.0, 10.0]


def test_cg_failure_doubles_f_rand_then_gives_up(data, grids10):
    st, pol, ctfs = data
    cfg = MarchConfig(cg_double=1, f_rand=0.1, f_rand_max=0.4)
    with pytest.raises(MarchingError) as exc:
        frequency_march(pol, ctfs, *grids10, cfg)
    assert exc.value.trace.steps[-1].f_rand == pytest.approx(0.4)
    assert exc.value.model is not None


def test_warmup_rounds_are_recorded(data, grids10):
    st, pol, ctfs = data
    seen = []
    _, tr = frequency_march(pol, ctfs, *grids10, MarchConfig(warmup_iterations=2),
                            callback=lambda s, m, a: seen.append(s))
    assert tr.steps[1].k == 2.0 and tr.steps[1].f_rand == 0.0
    assert seen == list(range(1, len(tr.steps)))


def test_config_and_input_errors(data, grids10):
    st, pol, ctfs = data
    with pytest.raises(ValueError):
        MarchConfig(f_rand=1.5)
    with pytest.raises(ValueError):
        MarchConfig(init="other")
    with pytest.raises(ValueError):
        frequency_march(PolarImage(pol.ks, None, pol.coeffs[:0]), [], *grids10)
    with pytest.raises(ValueError):
        frequency_march(pol, ctfs, *grids10, MarchConfig(k1=1.0))


def test_baseline_and_refinement(data, grids10, truth10):
    st, pol, ctfs = data
    with pytest.raises(ValueError):
        known_angles_baseline(pol, None, ctfs, *grids10)
    base, info = known_angles_baseline(pol, st.orientations, ctfs, *grids10)
    assert len(base.ks) == grids10[0].nr
    ref, assign = classical_refinement(pol, ctfs, *grids10, truth10, 1)
    assert len(assign) == 60 and np.median(assign.score) > 0.99
