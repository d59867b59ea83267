import numpy as np
import pytest
from hypothesis import example, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaugefields import diffcore as dc
from gaugefields.diffcore import Tensor
from gaugefields.render import Camera, composite, intersect_box, make_rays, psnr, stratified_sample


def camera(width=5, height=5, focal=4.0):
    pose = np.eye(4)
    pose[:3, 3] = [0.0, 0.0, 2.0]
    return Camera(pose, focal, width, height)


class TestRays:
    def test_center_pixel_looks_down_negative_z(self):
        rays = make_rays(camera(), [[2, 2]])
        np.testing.assert_allclose(rays.directions[0], [0.0, 0.0, -1.0], atol=1e-15)

    def test_unit_directions(self):
        rays = make_rays(camera(32, 24, 20.0))
        assert np.max(np.abs(np.linalg.norm(rays.directions, axis=1) - 1.0)) <= 1e-12

    def test_symmetric_pixels_mirror_x(self):
        rays = make_rays(camera(6, 6), [[1, 3], [4, 3]])
        assert rays.directions[0, 0] == pytest.approx(-rays.directions[1, 0], abs=1e-15)

    def test_degenerate_pose(self):
        pose = np.eye(4)
        pose[0, 0] = 2.0
        with pytest.raises(ValueError, match="pose"):
            Camera(pose, 1.0, 4, 4)
        with pytest.raises(ValueError, match="focal"):
            Camera(np.eye(4), 0.0, 4, 4)

    def test_box_clipping(self):
        rays = make_rays(camera(), [[2, 2], [0, 0]], near=0.0, far=10.0)
        clipped, hit = intersect_box(rays)
        assert hit[0] and clipped.near[0] == pytest.approx(1.5) and clipped.far[0] == pytest.approx(2.5)


class TestStratified:
    def test_midpoints(self):
        t, _ = stratified_sample(0.0, 1.0, 4, jitter=False)
        np.testing.assert_allclose(t[0], [0.125, 0.375, 0.625, 0.875], atol=0)

    def test_deltas_cover_interval(self):
        rng = np.random.default_rng(0)
        near, far = rng.random(50), 1.0 + rng.random(50) * 3
        _, delta = stratified_sample(near, far, 16, rng)
        assert np.max(np.abs(delta.sum(axis=1) - (far - near))) <= 1e-12
        assert (delta > 0).all()

    def test_deterministic_under_seed(self):
        a = stratified_sample(0.0, 2.0, 8, np.random.default_rng(3))
        b = stratified_sample(0.0, 2.0, 8, np.random.default_rng(3))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_one_sample_per_stratum(self):
        t, _ = stratified_sample(0.0, 1.0, 10, np.random.default_rng(1))
        assert np.array_equal(np.floor(t[0] * 10), np.arange(10))

    def test_zero_samples_rejected(self):
        with pytest.raises(ValueError):
            stratified_sample(0.0, 1.0, 0, jitter=False)


class TestComposite:
    def test_empty_space(self):
        out = composite(np.zeros((1, 4)), np.full((1, 4, 3), 0.7), np.full((1, 4), 0.25))
        assert np.array_equal(out.color.data, [[0, 0, 0]])
        assert np.array_equal(out.weights.data, np.zeros((1, 4)))
        assert out.final_transmittance.data[0] == 1.0

    def test_single_sample_alpha(self):
        out = composite(np.array([2.0]), np.ones((1, 3)), np.array([0.5]))
        assert out.weights.data[0] == pytest.approx(1 - np.exp(-1.0), abs=1e-15)

    def test_two_samples(self):
        out = composite(np.array([[1.0, 1.0]]), np.ones((1, 2, 3)), np.array([[1.0, 1.0]]))
        assert out.transmittance.data[0, 1] == pytest.approx(np.exp(-1.0), abs=1e-15)
        assert out.weights.data.sum() == pytest.approx(1 - np.exp(-2.0), abs=1e-15)

    def test_background(self):
        out = composite(np.zeros((1, 2)), np.zeros((1, 2, 3)), np.ones((1, 2)), background=(1.0, 0.5, 0.0))
        np.testing.assert_array_equal(out.color.data, [[1.0, 0.5, 0.0]])

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            composite(np.array([[-0.1]]), np.zeros((1, 1, 3)), np.ones((1, 1)))

    def test_gradient_on_random_rays(self):
        rng = np.random.default_rng(0)
        sigma = Tensor(rng.random((3, 8)) * 3, requires_grad=True)
        color = Tensor(rng.random((3, 8, 3)), requires_grad=True)
        delta = rng.random((3, 8)) * 0.3 + 0.01
        weights = rng.normal(size=(3, 3))
        err = dc.grad_check(lambda s, c: (composite(s, c, delta).color * weights).sum(), [sigma, color])
        assert err <= 1e-5


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (6,), elements=st.floats(0, 50)),
    arrays(np.float64, (6,), elements=st.floats(1e-3, 1.0)),
)
@example(np.array([34.73821393, 0.0, 4.0, 0.0, 0.0, 0.0]), np.full(6, 1e-3))
def test_property_conservation_and_monotone_transmittance(sigma, delta):
    out = composite(sigma, np.zeros((6, 3)), delta)
    w, T = out.weights.data, out.transmittance.data
    assert abs(w.sum() + out.final_transmittance.data - 1.0) <= 1e-9
    assert T[0] == 1.0 and (np.diff(T) <= 0).all() and (w >= 0).all()


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (5,), elements=st.floats(0, 20)),
    st.integers(0, 4),
    st.floats(0.0, 5.0),
)
def test_property_more_density_never_more_light(sigma, i, bump):
    delta = np.full(5, 0.2)
    before = composite(sigma, np.zeros((5, 3)), delta).final_transmittance.data
    sigma2 = sigma.copy()
    sigma2[i] += bump
    after = composite(sigma2, np.zeros((5, 3)), delta).final_transmittance.data
    assert after <= before


class TestPsnr:
    def test_identical_cap(self):
        a = np.random.default_rng(0).random((4, 4, 3))
        assert psnr(a, a) == 100.0

    def test_twenty_db(self):
        assert psnr(np.full((2, 2, 3), 0.1), np.zeros((2, 2, 3))) == pytest.approx(20.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((3, 3, 3)), rng.random((3, 3, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))
