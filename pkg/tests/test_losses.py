import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview.core import SeededRng
from crossview.errors import ValidationError
from crossview.gradcheck import numeric_grad, random_bank, random_groups, rel_error
from crossview.losses import (
    CenterBank, center_loss, cross_view_intra_class_distance, cv_cl, cv_ec, init_centers,
    joint_loss_L1, joint_loss_L2, softmax_loss,
)


# ---- independent oracles: plain Python loops over every term ----

def sqdist(a, b):
    return sum((float(x) - float(y)) ** 2 for x, y in zip(a, b))


def cv_ec_oracle(g1, g2):
    shared = [i for i in g1 if i in g2]
    total = 0.0
    for i in shared:
        pair_sum = 0.0
        for p in g1[i]:
            for q in g2[i]:
                pair_sum += sqdist(p, q)
        total += pair_sum / (len(g1[i]) * len(g2[i]))
    return total / (2 * len(shared))


def cv_cl_oracle(g1, g2, bank):
    shared = [i for i in g1 if i in g2]
    total = 0.0
    for i in shared:
        for v, g in ((0, g1), (1, g2)):
            s = 0.0
            for x in g[i]:
                s += sqdist(x, bank.per_view[v][i]) + sqdist(x, bank.global_[i])
            total += s / len(g[i])
    return total / (2 * len(shared))


def instance(seed, max_ids=5, max_k=4):
    rng = SeededRng(seed)
    m, d = int(rng.integers(1, max_ids + 1)), int(rng.integers(1, 6))
    return rng, random_groups(rng, m, d, max_k), random_groups(rng, m, d, max_k), d


# ---- softmax ----

def test_softmax_uniform_two_classes():
    value, grad = softmax_loss([[0.0, 0.0]], [0])
    assert value == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_allclose(grad, [[-0.5, 0.5]], atol=1e-15)
    value, _ = softmax_loss(np.zeros((3, 2)), [0, 1, 1])
    assert value == pytest.approx(3 * math.log(2), abs=1e-14)


def test_softmax_confident_correct():
    value, grad = softmax_loss([40.0, -40.0], 0)
    assert value < 1e-30
    assert np.abs(grad).max() < 1e-30


def test_softmax_label_out_of_range():
    with pytest.raises(ValidationError):
        softmax_loss([[0.0, 1.0]], [2])


@pytest.mark.parametrize("seed", range(10))
def test_softmax_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=2, size=(4, 3))
    y = rng.integers(0, 3, size=4)
    _, g = softmax_loss(z, y)
    assert rel_error(g, numeric_grad(lambda: softmax_loss(z, y)[0], z)) < 1e-4


# ---- CV-EC ----

def test_cv_ec_aligned_views_is_zero(rng):
    g = {0: rng.normal(size=(1, 3)), 1: rng.normal(size=(1, 3))}
    res = cv_ec(g, {i: x.copy() for i, x in g.items()})
    assert res.value == 0.0
    assert all(not x.any() for x in res.grads1.values())


def test_cv_ec_hand_case():
    res = cv_ec({0: np.array([[1.0, 0.0]])}, {0: np.array([[0.0, 1.0]])})
    assert res.value == 1.0
    # M = K1 = K2 = 1: exact gradient equals the per-pair direction x1 - x2
    np.testing.assert_array_equal(res.grads1[0][0], [1.0, -1.0])
    np.testing.assert_array_equal(res.grads2[0][0], [-1.0, 1.0])


def test_cv_ec_gradient_is_pairwise_direction_scaled():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    res = cv_ec({0: a, 7: rng.normal(size=(1, 3))}, {0: b, 7: rng.normal(size=(2, 3))})
    M, K1, K2 = 2, 2, 3
    expected = sum(a[0] - q for q in b) / (M * K1 * K2)
    np.testing.assert_allclose(res.grads1[0][0], expected, rtol=1e-13)


@pytest.mark.parametrize("seed", range(40))
def test_cv_ec_matches_brute_force(seed):
    _, g1, g2, _ = instance(seed)
    assert abs(cv_ec(g1, g2).value - cv_ec_oracle(g1, g2)) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_cv_ec_gradients_finite_differences(seed):
    _, g1, g2, _ = instance(seed)
    res = cv_ec(g1, g2)
    for groups, grads in ((g1, res.grads1), (g2, res.grads2)):
        for i in groups:
            num = numeric_grad(lambda: cv_ec(g1, g2).value, groups[i])
            assert rel_error(grads[i], num) < 1e-4


def test_cv_ec_skips_single_view_identities():
    g1 = {0: np.ones((1, 2)), 1: np.ones((1, 2))}
    g2 = {0: np.zeros((1, 2)), 2: np.zeros((1, 2))}
    res = cv_ec(g1, g2)
    assert res.skipped == 2
    assert set(res.grads1) == {0}
    assert res.value == 1.0


def test_cv_ec_needs_shared_identity():
    with pytest.raises(ValidationError):
        cv_ec({0: np.ones((1, 2))}, {1: np.ones((1, 2))})


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_cv_ec_symmetry_and_quadratic_homogeneity(seed, s):
    _, g1, g2, _ = instance(seed)
    v = cv_ec(g1, g2).value
    assert cv_ec(g2, g1).value == pytest.approx(v, rel=1e-12, abs=1e-12)
    scaled = cv_ec({i: s * x for i, x in g1.items()}, {i: s * x for i, x in g2.items()}).value
    assert scaled == pytest.approx(s * s * v, rel=1e-10, abs=1e-10)
    assert v >= 0


# ---- original center loss ----

def test_center_loss_zero_at_centers():
    c = np.array([1.0, 2.0])
    value, grads = center_loss({3: np.array([c, c])}, {3: c})
    assert value == 0.0 and not grads[3].any()


def test_center_loss_hand_case():
    value, _ = center_loss({0: np.array([[0.0, 0.0], [2.0, 0.0]])}, {0: np.array([1.0, 0.0])})
    assert value == 0.5


def test_center_loss_missing_center():
    with pytest.raises(ValidationError):
        center_loss({0: np.ones((1, 2))}, {1: np.ones(2)})


@pytest.mark.parametrize("seed", range(10))
def test_center_loss_gradients(seed):
    rng, groups, _, d = instance(seed)
    centers = {i: rng.normal(size=d) for i in groups}
    _, grads = center_loss(groups, centers)
    for i in groups:
        num = numeric_grad(lambda: center_loss(groups, centers)[0], groups[i])
        assert rel_error(grads[i], num) < 1e-4


# ---- CV-CL ----

def test_cv_cl_zero_configuration():
    x = np.array([[1.0, -1.0]])
    bank = CenterBank({0: x[0].copy()}, {0: {0: x[0].copy()}, 1: {0: x[0].copy()}}, 2)
    res = cv_cl({0: x}, {0: x.copy()}, bank)
    assert res.value == 0.0
    assert not res.grads1[0].any() and not res.center_grads.global_[0].any()


def test_cv_cl_hand_case():
    x1, x2 = np.array([2.0, 0.0]), np.array([0.0, 0.0])
    bank = CenterBank({0: np.array([1.0, 0.0])}, {0: {0: x1.copy()}, 1: {0: x2.copy()}}, 2)
    res = cv_cl({0: x1[None]}, {0: x2[None]}, bank)
    assert res.value == 1.0


def test_cv_cl_center_gradient_hand_case():
    # global-center line with x1=1, x2=3, C=0: (C - x1) + (C - x2) = -4
    bank = CenterBank({0: np.array([0.0])}, {0: {0: np.array([1.0])}, 1: {0: np.array([3.0])}}, 1)
    res = cv_cl({0: np.array([[1.0]])}, {0: np.array([[3.0]])}, bank)
    np.testing.assert_array_equal(res.center_grads.global_[0], [-4.0])
    np.testing.assert_array_equal(res.center_grads.per_view[0][0], [0.0])


def test_cv_cl_embedding_gradient_structure():
    # M = K = 1: gradient is (x - C_v) + (x - C)
    bank = CenterBank({0: np.array([1.0, 1.0])}, {0: {0: np.array([0.0, 2.0])}, 1: {0: np.zeros(2)}}, 2)
    x = np.array([3.0, -1.0])
    res = cv_cl({0: x[None]}, {0: np.zeros((1, 2))}, bank)
    np.testing.assert_array_equal(res.grads1[0][0], (x - [0, 2]) + (x - [1, 1]))


@pytest.mark.parametrize("seed", range(40))
def test_cv_cl_matches_brute_force(seed):
    rng, g1, g2, d = instance(seed)
    bank = random_bank(rng, list(g1), d)
    assert abs(cv_cl(g1, g2, bank).value - cv_cl_oracle(g1, g2, bank)) < 1e-10


@pytest.mark.parametrize("seed", range(10))
def test_cv_cl_gradients(seed):
    rng, g1, g2, d = instance(seed)
    bank = random_bank(rng, list(g1), d)
    res = cv_cl(g1, g2, bank)
    f = lambda: cv_cl(g1, g2, bank).value  # noqa: E731
    for groups, grads in ((g1, res.grads1), (g2, res.grads2)):
        for i in groups:
            assert rel_error(grads[i], numeric_grad(f, groups[i])) < 1e-4
    for i in g1:
        assert rel_error(res.center_grads.global_[i], numeric_grad(f, bank.global_[i])) < 1e-4
        for v in (0, 1):
            assert rel_error(res.center_grads.per_view[v][i], numeric_grad(f, bank.per_view[v][i])) < 1e-4


def test_cv_cl_missing_bank_entry():
    bank = CenterBank({}, {0: {}, 1: {}}, 2)
    with pytest.raises(ValidationError):
        cv_cl({0: np.ones((1, 2))}, {0: np.ones((1, 2))}, bank)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100))
def test_center_losses_quadratic_homogeneity(seed, s):
    rng, g1, g2, d = instance(seed)
    bank = random_bank(rng, list(g1), d)
    sb = CenterBank({i: s * c for i, c in bank.global_.items()},
                    {v: {i: s * c for i, c in cs.items()} for v, cs in bank.per_view.items()}, d)
    sg1 = {i: s * x for i, x in g1.items()}
    sg2 = {i: s * x for i, x in g2.items()}
    v = cv_cl(g1, g2, bank).value
    assert v >= 0
    assert cv_cl(sg1, sg2, sb).value == pytest.approx(s * s * v, rel=1e-10, abs=1e-10)
    c, _ = center_loss(g1, bank.global_)
    assert center_loss(sg1, sb.global_)[0] == pytest.approx(s * s * c, rel=1e-10, abs=1e-10)


# ---- joint losses ----

def test_joint_losses():
    assert joint_loss_L1([1.0, 2.0], 3.0, 0.0) == 3.0
    assert joint_loss_L1([1.0, 2.0], 3.0, 0.1) == pytest.approx(3.3, abs=1e-15)
    assert joint_loss_L2([0.5, 0.5], 2.0, 0.0) == 1.0
    assert joint_loss_L2([0.5, 0.5], 2.0, 0.1) == pytest.approx(1.2, abs=1e-15)
    with pytest.raises(ValidationError):
        joint_loss_L1([1.0], 1.0, -0.1)


def test_published_lambda_defaults():
    from crossview.trainer import TrainConfig

    cfg = TrainConfig()
    assert cfg.lambda1 == 0.1 and cfg.lambda2 == 0.1
    assert (cfg.lr, cfg.alpha, cfg.momentum, cfg.weight_decay) == (1e-4, 1e-3, 0.9, 1e-4)


# ---- centers and cross-view distance ----

def test_init_centers_single_samples():
    x1, x2 = np.array([2.0, 0.0]), np.array([0.0, 0.0])
    bank = init_centers({0: {0: x1[None], 1: x2[None]}})
    np.testing.assert_array_equal(bank.per_view[0][0], x1)
    np.testing.assert_array_equal(bank.per_view[1][0], x2)
    np.testing.assert_array_equal(bank.global_[0], [1.0, 0.0])


def test_init_centers_empty_view_uses_global_mean():
    bank = init_centers({0: {0: np.array([[1.0], [3.0]])}, 1: {1: np.array([[5.0]])}}, views=[0, 1])
    np.testing.assert_array_equal(bank.per_view[1][0], [2.0])
    np.testing.assert_array_equal(bank.per_view[0][1], [5.0])


def test_init_centers_order_invariant(rng):
    x = rng.normal(size=(5, 3))
    a = init_centers({0: {0: x, 1: x[:2]}})
    b = init_centers({0: {0: x[::-1], 1: x[1::-1]}})
    assert a.distance_to(b) < 1e-28


def test_init_centers_rejects_empty_identity():
    with pytest.raises(ValidationError):
        init_centers({0: {0: np.zeros((0, 2))}})


def test_crossview_distance():
    emb = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert cross_view_intra_class_distance(emb, [0, 0], [0, 1]) == 1.0
    assert cross_view_intra_class_distance(np.ones((2, 2)), [0, 0], [0, 1]) == 0.0
    with pytest.raises(ValidationError):
        cross_view_intra_class_distance(emb, [0, 1], [0, 1])
