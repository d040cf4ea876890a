import numpy as np
import pytest
from oracles import (
    central_difference_grad,
    naive_inter,
    naive_intra,
    naive_reg,
    naive_total,
    naive_triplet_nll,
)

from triplethash import loss
from triplethash.loss import HyperParams, TripletLabel

LOG2 = float(np.log(2.0))


def random_instance(k, n, n_triplets, seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(k, n))
    g = rng.normal(size=(k, n))
    b = np.where(rng.normal(size=(k, n)) >= 0, 1.0, -1.0)
    lap = rng.normal(size=(n, n))
    lap = (lap + lap.T) / 2
    triplets = []
    for _ in range(n_triplets):
        q = int(rng.integers(n))
        p, nn = rng.choice(n, size=2, replace=False)
        triplets.append(TripletLabel(q, int(p), int(nn)))
    return f, g, b, lap, triplets


def test_sigmoid_at_zero():
    assert loss.sigmoid(0.0) == 0.5


def test_sigmoid_symmetry():
    for x in (-3.7, -0.2, 1.5, 12.0):
        assert loss.sigmoid(x) == pytest.approx(1.0 - loss.sigmoid(-x), abs=1e-15)


def test_sigmoid_saturation_and_stability():
    assert abs(loss.sigmoid(100.0) - 1.0) < 1e-12
    with np.errstate(over="raise"):
        assert loss.sigmoid(700.0) == 1.0
        assert loss.sigmoid(-700.0) == pytest.approx(0.0, abs=1e-300)


def test_half_dot_examples():
    assert loss.half_dot(np.ones(4), np.ones(4)) == 2.0
    assert loss.half_dot(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
    assert loss.half_dot(np.array([1.0, -1.0]), np.array([1.0, 1.0])) == 0.0
    with pytest.raises(Exception):
        loss.half_dot(np.ones(3), np.ones(4))


def test_triplet_nll_balanced_gap():
    f = np.ones((2, 3))
    value = loss.triplet_nll(f, f, f, [TripletLabel(0, 1, 2)], alpha=0.0)
    assert value == pytest.approx(LOG2, abs=1e-12)


def test_triplet_nll_saturated_gap():
    # gap of 50 once alpha is absorbed: anchor.pos/2 = 50, anchor.neg/2 = 0
    anchor = np.array([[10.0], [0.0], [0.0]])
    pos = np.array([[10.0], [0.0], [0.0]])
    neg = np.array([[0.0], [10.0], [0.0]])
    k = 1
    a = np.hstack([anchor, pos, neg])
    value = loss.triplet_nll(a, a, a, [TripletLabel(0, 1, 2)], alpha=0.0)
    assert value < 1e-12


def test_triplet_nll_matches_naive_oracle():
    rng = np.random.default_rng(21)
    anchor = rng.normal(size=(4, 6))
    pos = rng.normal(size=(4, 6))
    neg = rng.normal(size=(4, 6))
    triplets = [
        TripletLabel(int(rng.integers(6)), *map(int, rng.choice(6, 2, replace=False)))
        for _ in range(10)
    ]
    got = loss.triplet_nll(anchor, pos, neg, triplets, alpha=0.7)
    want = naive_triplet_nll(anchor, pos, neg, triplets, 0.7)
    assert got == pytest.approx(want, rel=1e-12)


def test_triplet_nll_names_bad_triplet():
    f = np.ones((2, 3))
    with pytest.raises(IndexError, match="triplet 1"):
        loss.triplet_nll(f, f, f, [TripletLabel(0, 1, 2), TripletLabel(0, 3, 1)], 0.0)


def test_inter_modal_loss_equal_matrices():
    k, n, m = 3, 5, 7
    f = np.random.default_rng(22).normal(size=(k, n))
    # p == n is disallowed, so build gap-zero triplets via identical columns
    f[:, 1] = f[:, 2]
    triplets = [TripletLabel(0, 1, 2)] * m
    value = loss.inter_modal_loss(f, f.copy(), triplets, alpha=0.0)
    assert value == pytest.approx(2 * m * LOG2, rel=1e-12)


def test_inter_modal_loss_empty():
    f = np.ones((2, 4))
    assert loss.inter_modal_loss(f, f, [], 0.5) == 0.0


def test_inter_modal_loss_is_sum_of_directions():
    f, g, _, _, triplets = random_instance(4, 7, 9, seed=23)
    got = loss.inter_modal_loss(f, g, triplets, alpha=1.1)
    want = naive_triplet_nll(f, g, g, triplets, 1.1) + naive_triplet_nll(
        g, f, f, triplets, 1.1
    )
    assert got == pytest.approx(want, rel=1e-12)


def test_intra_modal_loss_identical_columns():
    f = np.ones((3, 4))
    g = np.ones((3, 4))
    value = loss.intra_modal_loss(f, g, [TripletLabel(0, 1, 2)], alpha=0.0)
    assert value == pytest.approx(2 * LOG2, rel=1e-12)


def test_intra_modal_loss_matches_naive():
    f, g, _, _, triplets = random_instance(3, 6, 8, seed=24)
    got = loss.intra_modal_loss(f, g, triplets, alpha=0.4)
    assert got == pytest.approx(naive_intra(f, g, triplets, 0.4), rel=1e-12)


def test_graph_reg_loss_zero_case():
    rng = np.random.default_rng(25)
    f = rng.normal(size=(3, 4))
    f -= f.mean(axis=1, keepdims=True)  # zero row sums
    lap = rng.normal(size=(4, 4))
    assert loss.graph_reg_loss(f, f, f, lap, gamma=2.0, eta=3.0, beta=0.0) == (
        pytest.approx(0.0, abs=1e-18)
    )


def test_graph_reg_loss_forced_value():
    k, n, gamma = 3, 5, 7.0
    b = np.ones((k, n))
    zeros = np.zeros((k, n))
    value = loss.graph_reg_loss(zeros, zeros, b, np.zeros((n, n)), gamma, 50.0, 1.0)
    assert value == pytest.approx(gamma * 2 * k * n, rel=1e-14)


def test_graph_reg_loss_matches_naive():
    f, g, b, lap, _ = random_instance(4, 6, 0, seed=26)
    got = loss.graph_reg_loss(f, g, b, lap, 100.0, 50.0, 1.0)
    want = naive_reg(f, g, b, lap, 100.0, 50.0, 1.0)
    assert got == pytest.approx(want, rel=1e-10)


def test_total_loss_zero_inputs():
    z = np.zeros((2, 3))
    out = loss.total_loss(z, z, z, np.zeros((3, 3)), [], HyperParams(2, alpha=0.0))
    assert out.total == 0.0


def test_total_loss_fields_sum():
    f, g, b, lap, triplets = random_instance(4, 8, 12, seed=27)
    hp = HyperParams(4)
    out = loss.total_loss(f, g, b, lap, triplets, hp)
    assert out.total == pytest.approx(out.j_inter + out.j_intra + out.j_re, rel=1e-12)


def test_total_loss_matches_naive():
    f, g, b, lap, triplets = random_instance(3, 7, 10, seed=28)
    hp = HyperParams(3, alpha=1.5, gamma=10.0, eta=5.0, beta=2.0)
    out = loss.total_loss(f, g, b, lap, triplets, hp)
    want = naive_total(f, g, b, lap, triplets, 1.5, 10.0, 5.0, 2.0)
    assert out.total == pytest.approx(want, rel=1e-10)


def test_hyperparams_alpha_defaults_to_half_code_length():
    assert HyperParams(16).alpha == 8.0
    assert HyperParams(16, alpha=3.0).alpha == 3.0


def test_grad_text_no_triplets_quantization_only():
    rng = np.random.default_rng(29)
    g = rng.normal(size=(3, 5))
    f = rng.normal(size=(3, 5))
    b = np.where(rng.normal(size=(3, 5)) >= 0, 1.0, -1.0)
    hp = HyperParams(3, alpha=0.0, gamma=4.0, eta=0.0, beta=1.0)
    got = loss.grad_text(f, g, b, [], hp)
    assert np.allclose(got, 2 * 4.0 * (g - b), atol=1e-14)


def test_grad_text_zero_row_sums_no_gamma():
    rng = np.random.default_rng(30)
    g = rng.normal(size=(3, 5))
    g -= g.mean(axis=1, keepdims=True)
    f = rng.normal(size=(3, 5))
    b = np.ones((3, 5))
    hp = HyperParams(3, alpha=0.0, gamma=0.0, eta=7.0, beta=1.0)
    got = loss.grad_text(f, g, b, [], hp)
    assert np.abs(got).max() < 1e-12


@pytest.mark.parametrize("seed", [31, 32])
def test_gradients_match_finite_differences(seed):
    k, n = 4, 8
    f, g, b, lap, triplets = random_instance(k, n, 12, seed=seed)
    hp = HyperParams(k, gamma=3.0, eta=2.0, beta=1.0)

    def total_of_g(values):
        return loss.total_loss(f, values, b, lap, triplets, hp).total

    def total_of_f(values):
        return loss.total_loss(values, g, b, lap, triplets, hp).total

    got_g = loss.grad_text(f, g, b, triplets, hp)
    fd_g = central_difference_grad(total_of_g, g, h=1e-5)
    assert np.abs(got_g - fd_g).max() / max(1.0, np.abs(fd_g).max()) < 1e-5

    got_f = loss.grad_image(f, g, b, triplets, hp)
    fd_f = central_difference_grad(total_of_f, f, h=1e-5)
    assert np.abs(got_f - fd_f).max() / max(1.0, np.abs(fd_f).max()) < 1e-5


def test_gradient_symmetry_under_modality_swap():
    f, g, b, _, triplets = random_instance(3, 6, 9, seed=33)
    hp = HyperParams(3, alpha=0.8, gamma=2.0, eta=1.0, beta=0.5)
    swap_qpn = triplets
    assert np.allclose(
        loss.grad_text(f, g, b, swap_qpn, hp),
        loss.grad_image(g, f, b, swap_qpn, hp),
        atol=1e-14,
    )


def test_anchor_only_gradient_drops_candidate_roles():
    f, g, b, _, triplets = random_instance(4, 7, 10, seed=34)
    hp = HyperParams(4, alpha=0.0, gamma=0.0, eta=0.0, beta=0.0)
    got = loss.grad_text(f, g, b, triplets, hp, anchor_only=True)

    # oracle: only the terms where i anchors a triplet
    from oracles import sigmoid as s

    want = np.zeros_like(g)
    for q, p, n in triplets:
        gap_inter = 0.5 * g[:, q] @ (f[:, p] - f[:, n])
        want[:, q] += -0.5 * (1 - s(gap_inter)) * (f[:, p] - f[:, n])
        gap_intra = 0.5 * g[:, q] @ (g[:, p] - g[:, n])
        want[:, q] += -0.5 * (1 - s(gap_intra)) * (g[:, p] - g[:, n])
    assert np.allclose(got, want, atol=1e-12)


def test_losses_finite_for_extreme_gaps():
    # columns engineered so theta gaps reach +-1e4
    big = 1e4
    f = np.array([[np.sqrt(2 * big), np.sqrt(2 * big), -np.sqrt(2 * big)]])
    triplets = [TripletLabel(0, 1, 2), TripletLabel(0, 2, 1)]
    value = loss.triplet_nll(f, f, f, triplets, alpha=0.0)
    assert np.isfinite(value)
    grad = loss.grad_text(f, f, f, triplets, HyperParams(1, alpha=0.0, gamma=0, eta=0, beta=0))
    assert np.all(np.isfinite(grad))


def test_triplet_nll_monotonicity():
    rng = np.random.default_rng(35)
    f = rng.normal(size=(3, 3))
    base = loss.triplet_nll(f, f, f, [TripletLabel(0, 1, 2)], alpha=0.0)
    # raising agreement with the positive lowers the loss
    closer = f.copy()
    closer[:, 1] = f[:, 1] + 0.5 * f[:, 0]
    assert loss.triplet_nll(f, closer, f, [TripletLabel(0, 1, 2)], 0.0) < base
    # raising agreement with the negative raises the loss
    harder = f.copy()
    harder[:, 2] = f[:, 2] + 0.5 * f[:, 0]
    assert loss.triplet_nll(f, f, harder, [TripletLabel(0, 1, 2)], 0.0) > base


def test_vectorized_matches_naive_on_many_instances():
    for trial in range(20):
        k = int(np.random.default_rng(trial).integers(2, 6))
        f, g, b, lap, triplets = random_instance(k, 6, 8, seed=100 + trial)
        hp = HyperParams(k, gamma=9.0, eta=4.0, beta=0.7)
        out = loss.total_loss(f, g, b, lap, triplets, hp)
        assert out.j_inter == pytest.approx(
            naive_inter(f, g, triplets, hp.alpha), rel=1e-10
        )
        assert out.j_intra == pytest.approx(
            naive_intra(f, g, triplets, hp.alpha), rel=1e-10
        )
        assert out.j_re == pytest.approx(
            naive_reg(f, g, b, lap, hp.gamma, hp.eta, hp.beta), rel=1e-10
        )
