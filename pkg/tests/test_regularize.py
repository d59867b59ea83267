import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaugefields import diffcore as dc
from gaugefields.gauge import ContinuousGauge
from gaugefields.regularize import (
    CriticNetwork,
    InfoRegConfig,
    InverseGauge,
    cycle_loss,
    emd_exact,
    inforeg_loss,
    js_mi_bound,
    lattice_targets,
    prior_continuous,
    prior_discrete,
    radiance_weighted_sample,
    structural_loss,
)
from gaugefields.train.optim import Adam

LN2 = np.log(2.0)


def brute_force_emd(a, b):
    h = len(a)
    return min(np.mean(np.linalg.norm(a - b[list(p)], axis=1)) for p in itertools.permutations(range(h)))


class TestEmd:
    def test_identical_sets(self):
        a = np.random.default_rng(0).random((7, 2))
        assert emd_exact(a, a[::-1]).cost.item() == 0.0

    def test_single_pair(self):
        assert emd_exact(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]])).cost.item() == 1.0

    def test_h4_matches_24_permutations(self):
        rng = np.random.default_rng(1)
        a, b = rng.random((4, 2)), rng.random((4, 2))
        assert abs(emd_exact(a, b).cost.item() - brute_force_emd(a, b)) <= 1e-12

    def test_plan_marginals(self):
        rng = np.random.default_rng(2)
        res = emd_exact(rng.random((9, 2)), rng.random((9, 2)))
        np.testing.assert_allclose(res.plan.sum(axis=0), 1 / 9, atol=1e-9)
        np.testing.assert_allclose(res.plan.sum(axis=1), 1 / 9, atol=1e-9)
        assert (res.cost_matrix >= 0).all()

    def test_unequal_counts(self):
        with pytest.raises(ValueError, match="unequal"):
            emd_exact(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_gradient_with_fixed_plan(self):
        rng = np.random.default_rng(3)
        a = dc.Tensor(rng.random((5, 2)), requires_grad=True)
        b = rng.random((5, 2))
        assert dc.grad_check(lambda p: emd_exact(p, b).cost, a) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_property_emd_is_a_metric(h, seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.random((h, 2)), rng.random((h, 2)), rng.random((h, 2))
    d = lambda p, q: emd_exact(p, q).cost.item()
    assert abs(d(a, b) - d(b, a)) <= 1e-9
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


class TestPriorContinuous:
    def lattice(self):
        return lattice_targets(16, jitter=False)

    def test_on_lattice_is_zero(self):
        targets = self.lattice()
        pts = np.random.default_rng(0).random((40, 3))
        cost = prior_continuous(lambda x: targets, pts, np.ones(40), h=16, jitter=False)
        assert cost.item() == pytest.approx(0.0, abs=1e-15)

    def test_collapsed_to_corner(self):
        targets = self.lattice()
        pts = np.random.default_rng(0).random((40, 3))
        cost = prior_continuous(lambda x: np.zeros((16, 2)), pts, np.ones(40), h=16, jitter=False)
        c = (np.arange(4) + 0.5) / 4
        closed_form = np.mean([np.hypot(u, v) for u in c for v in c])
        assert cost.item() == pytest.approx(closed_form, abs=1e-12)
        assert closed_form == pytest.approx(np.linalg.norm(targets, axis=1).mean(), abs=1e-15)

    def test_monotone_along_interpolation(self):
        targets = self.lattice()
        pts = np.random.default_rng(0).random((40, 3))
        costs = [
            prior_continuous(lambda x, t=t: t * targets, pts, np.ones(40), h=16, jitter=False).item()
            for t in np.linspace(0, 1, 5)
        ]
        assert all(b < a for a, b in zip(costs, costs[1:]))

    def test_zero_weights_rejected(self):
        with pytest.raises(ValueError, match="zero"):
            prior_continuous(lambda x: x[:, :2], np.random.default_rng(0).random((5, 3)), np.zeros(5), h=4)

    def test_jittered_lattice_one_point_per_cell(self):
        t = lattice_targets(64, np.random.default_rng(0))
        cells = np.floor(t * 8).astype(int)
        assert len({tuple(c) for c in cells}) == 64


class TestPriorDiscrete:
    def test_uniform_is_zero(self):
        assert prior_discrete(np.full((3, 8), 1 / 8)).item() == pytest.approx(0.0, abs=1e-15)

    def test_one_hot(self):
        d = np.zeros((5, 256))
        d[:, 17] = 1.0
        assert prior_discrete(d).item() == pytest.approx(np.log(256), abs=1e-12)

    def test_half_half(self):
        assert prior_discrete(np.array([[0.5, 0.5, 0.0, 0.0]])).item() == pytest.approx(LN2, abs=1e-15)

    def test_batch_mean_then_kl(self):
        d = np.eye(4)  # four one-hots average to uniform
        assert prior_discrete(d).item() == pytest.approx(0.0, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            prior_discrete(np.zeros((0, 4)))

    def test_gradient(self):
        logits = dc.Tensor(np.random.default_rng(0).normal(size=(6, 5)), requires_grad=True)
        assert dc.grad_check(lambda z: prior_discrete(dc.softmax(z)), logits) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-6, 6)))
def test_property_prior_discrete_bounds(logits):
    value = prior_discrete(dc.softmax(logits)).item()
    assert -1e-12 <= value <= np.log(6) + 1e-12


class TestInfoReg:
    def test_zero_critic(self):
        critic = lambda x, y: dc.Tensor(np.zeros(len(np.asarray(x))))
        x, y = np.zeros((3, 1)), np.zeros((3, 1))
        assert js_mi_bound((x, y), (x, y), critic).item() == pytest.approx(-2 * LN2, abs=1e-15)

    def test_saturated_critic_limit(self):
        x, y = np.zeros((2, 1)), np.zeros((2, 1))
        pos = lambda x_, y_: dc.Tensor(np.full(2, 60.0))
        neg = lambda x_, y_: dc.Tensor(np.full(2, -60.0))
        critic = lambda x_, y_: pos(x_, y_) if x_ is x else neg(x_, y_)
        xn = x.copy()
        assert js_mi_bound((x, y), (xn, y), critic).item() == pytest.approx(0.0, abs=1e-20)

    def test_weights_normalized(self):
        vals = dc.Tensor(np.array([1.0, -2.0]))
        critic = lambda x, y: vals
        x = np.zeros((2, 1))
        w = np.array([3.0, 1.0])
        got = js_mi_bound((x, x), (x, x), critic, weights=w).item()
        pos = -(0.75 * np.logaddexp(0, -1.0) + 0.25 * np.logaddexp(0, 2.0))
        neg = np.mean(np.logaddexp(0, [1.0, -2.0]))
        assert got == pytest.approx(pos - neg, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            js_mi_bound((np.zeros((0, 1)), np.zeros((0, 1))), (np.zeros((1, 1)), np.zeros((1, 1))), None)

    def test_loss_examples(self):
        assert inforeg_loss(0.7, 3.0, 0.0, 0.0) == 0.0
        assert inforeg_loss(0.7, 3.0, 1.0, 0.0) == -0.7
        assert inforeg_loss(0.5, 2.0, 1.0, 0.1) == pytest.approx(-0.35, abs=1e-15)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            InfoRegConfig(gamma=-1.0)
        with pytest.raises(ValueError):
            InfoRegConfig(epsilon=float("nan"))


@settings(max_examples=30, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 3), st.floats(0, 3))
def test_property_inforeg_linear(mi, prior, gamma, eps):
    expected = -(gamma + eps) * mi + eps * prior
    assert inforeg_loss(mi, prior, gamma, eps) == pytest.approx(expected, abs=1e-12)


def _train_tabular_critic(joint: np.ndarray, steps: int = 1500) -> float:
    """Fit the critic on an exactly enumerated 4x4 joint; negatives are the product of marginals."""
    K = joint.shape[0]
    eye = np.eye(K)
    xs, ys = np.meshgrid(np.arange(K), np.arange(K), indexing="ij")
    x, y = eye[xs.reshape(-1)], eye[ys.reshape(-1)]
    px, py = joint.sum(1), joint.sum(0)
    neg_w = np.outer(px, py).reshape(-1)
    assert np.allclose(neg_w, neg_w[0])  # uniform marginals: negatives are a plain mean
    critic = CriticNetwork(K, K, np.random.default_rng(0), hidden=(32, 32, 32))
    params = critic.parameters()
    opt = Adam(params, 1e-2)
    w = joint.reshape(-1)
    for _ in range(steps):
        bound = js_mi_bound((x, y), (x, y), critic, weights=w)
        opt.step(dc.grad(-bound, params))
    return js_mi_bound((x, y), (x, y), critic, weights=w).item()


def _js_divergence(p, q):
    m = 0.5 * (p + q)
    kl = lambda a, b: np.sum(np.where(a > 0, a * np.log(np.where(a > 0, a, 1) / b), 0.0))
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


class TestMutualInformationToys:
    def test_bound_respects_true_divergence(self):
        joint = np.full((4, 4), 0.02)
        joint[np.arange(4), np.arange(4)] = 0.19
        joint /= joint.sum()
        q = np.full(16, 1 / 16)
        jsd = _js_divergence(joint.reshape(-1), q)
        bound = _train_tabular_critic(joint)
        optimum = 2 * jsd - 2 * LN2
        assert bound <= optimum + 1e-9
        assert bound >= optimum - 5e-3
        assert bound + 2 * LN2 <= jsd * 2

    def test_independent_vs_dependent(self):
        independent = _train_tabular_critic(np.full((4, 4), 1 / 16))
        dependent = _train_tabular_critic(np.eye(4) / 4)
        assert independent + 2 * LN2 <= 0.02
        assert dependent - independent >= 0.5


class TestBaselines:
    def test_cycle_exact_inverse(self):
        x = np.random.default_rng(0).random((10, 3))
        assert cycle_loss(x, lambda p: p * 2.0, lambda y: y * 0.5).item() == 0.0

    def test_cycle_constant_maps(self):
        x = np.random.default_rng(1).random((10, 3))
        c = np.array([0.2, 0.4, 0.6])
        got = cycle_loss(x, lambda p: np.zeros((len(p), 2)), lambda y: dc.Tensor(np.tile(c, (len(y), 1))))
        assert got.item() == pytest.approx(np.mean(np.sum((x - c) ** 2, axis=1)), abs=1e-15)

    def test_cycle_gradient(self):
        inv = InverseGauge(np.random.default_rng(2), hidden=(6,))
        g = ContinuousGauge(np.random.default_rng(3), hidden=(6,), zero_init=False)
        x = np.random.default_rng(4).random((5, 3))
        params = inv.parameters() + g.parameters()
        assert dc.grad_check(lambda *_: cycle_loss(x, g, inv), params) <= 1e-5

    def test_structural_zero_offset(self):
        g = ContinuousGauge(np.random.default_rng(0), mode="offset")
        assert structural_loss(g, np.random.default_rng(1).random((8, 3))).item() == 0.0

    @pytest.mark.parametrize("drop_axis", [0, 1, 2])
    def test_structural_constant_offset(self, drop_axis):
        g = ContinuousGauge(np.random.default_rng(0), mode="offset", param="grid", grid_resolution=2,
                            drop_axis=drop_axis)
        g.net.values.data[:] = [0.1, 0.0]
        got = structural_loss(g, np.random.default_rng(1).random((8, 3))).item()
        assert got == pytest.approx(0.01, abs=1e-15)

    def test_structural_needs_offset_mode(self):
        with pytest.raises(ValueError, match="offset"):
            structural_loss(ContinuousGauge(np.random.default_rng(0)), np.zeros((1, 3)))


class TestRadianceSampling:
    def test_one_hot(self):
        pts = np.arange(10.0).reshape(5, 2)
        out = radiance_weighted_sample(pts, [0, 0, 1, 0, 0], 50, np.random.default_rng(0))
        assert (out == pts[2]).all()

    def test_uniform_frequencies(self):
        h = 10_000
        pts = np.arange(4.0).reshape(4, 1)
        out = radiance_weighted_sample(pts, np.ones(4), h, np.random.default_rng(1))
        counts = np.bincount(out[:, 0].astype(int), minlength=4)
        sigma = np.sqrt(h * 0.25 * 0.75)
        assert np.all(np.abs(counts - h / 4) <= 3 * sigma)

    def test_deterministic(self):
        pts = np.random.default_rng(2).random((20, 2))
        w = np.random.default_rng(3).random(20)
        a = radiance_weighted_sample(pts, w, 30, np.random.default_rng(7))
        b = radiance_weighted_sample(pts, w, 30, np.random.default_rng(7))
        assert np.array_equal(a, b)

    def test_zero_sum(self):
        with pytest.raises(ValueError):
            radiance_weighted_sample(np.zeros((3, 2)), np.zeros(3), 4, np.random.default_rng(0))
