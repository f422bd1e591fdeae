"""Loss tests: frozen hand values, brute-force and Monte-Carlo oracles, FD checks."""

import math

import numpy as np
import pytest

from gla.autodiff import (
    Tape,
    Tensor,
    backward,
    constant,
    finite_difference_check_params,
)
from gla.losses import (
    LossError,
    LossWeights,
    dal,
    dal_direct,
    entropy_loss,
    feature_norms,
    kld_direct,
    kld_to_prior,
    mcd_discrepancy,
    recon,
    safn_feature_norm,
    softmax_cross_entropy,
)


def _gaussian_logpdf(x, mu, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)


# ---------------------------------------------------------------- cross entropy

def test_cross_entropy_uniform_logits_is_log_c():
    logits = constant(np.zeros((6, 10)))
    labels = np.array([0, 3, 9, 1, 2, 7])
    assert abs(softmax_cross_entropy(logits, labels).item() - math.log(10)) < 1e-12


def test_cross_entropy_two_class_hand_value():
    loss = softmax_cross_entropy(constant([[1.0, 0.0]]), np.array([0]))
    assert abs(loss.item() - math.log(1 + math.exp(-1))) < 1e-12
    assert abs(loss.item() - 0.313262) < 1e-6


def test_cross_entropy_vanishes_as_true_logit_grows():
    values = [
        softmax_cross_entropy(constant([[t, 0.0]]), np.array([0])).item()
        for t in (2.0, 5.0, 10.0, 20.0)
    ]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert values[-1] < 1e-8


def test_cross_entropy_matches_brute_force():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(7, 4))
    labels = rng.integers(0, 4, size=7)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    want = -logp[np.arange(7), labels].mean()
    got = softmax_cross_entropy(constant(logits), labels).item()
    assert abs(got - want) < 1e-12


def test_cross_entropy_rejects_bad_labels_and_empty_batch():
    logits = constant(np.zeros((3, 4)))
    with pytest.raises(LossError):
        softmax_cross_entropy(logits, np.array([0, 1, 4]))
    with pytest.raises(LossError):
        softmax_cross_entropy(logits, np.array([0, -1, 2]))
    with pytest.raises(LossError):
        softmax_cross_entropy(logits, np.array([0, 1]))
    with pytest.raises(LossError):
        softmax_cross_entropy(constant(np.zeros((0, 4))), np.array([], dtype=int))


# ---------------------------------------------------------------- kld_to_prior

def test_kld_to_prior_zero_for_exactly_standardized_batch():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(6, 3))
    z = (z - z.mean(axis=0)) / z.std(axis=0)
    assert abs(kld_to_prior(constant(z)).item()) < 1e-10


def test_kld_to_prior_hand_values():
    # mean 1, biased variance 1 -> 1/2 (1 + 1 - ln 1 - 1)
    assert abs(kld_to_prior(constant([[0.0], [2.0]])).item() - 0.5) < 1e-12
    # mean 0, biased variance 2 -> 1/2 (2 - ln 2 - 1)
    want = 0.5 * (2 - math.log(2) - 1)
    got = kld_to_prior(constant([[-math.sqrt(2)], [math.sqrt(2)]])).item()
    assert abs(got - want) < 1e-12
    assert abs(got - 0.153426) < 1e-6


def test_kld_to_prior_dimensions_add():
    z = np.hstack([np.array([[0.0], [2.0]]), np.array([[0.0], [2.0]])])
    assert abs(kld_to_prior(constant(z)).item() - 1.0) < 1e-12


def test_kld_to_prior_matches_monte_carlo():
    rng = np.random.default_rng(2)
    z = rng.normal(loc=0.4, scale=1.3, size=(50, 2))
    closed = kld_to_prior(constant(z)).item()
    mu = z.mean(axis=0)
    var = z.var(axis=0)
    draws = rng.normal(mu, np.sqrt(var), size=(1_000_000, 2))
    mc = (_gaussian_logpdf(draws, mu, var) - _gaussian_logpdf(draws, 0.0, 1.0)).sum(axis=1).mean()
    assert abs(closed - mc) < 1e-2


def test_kld_to_prior_single_row_rejected_but_dead_dim_is_finite():
    with pytest.raises(LossError):
        kld_to_prior(constant([[1.0, 2.0]]))
    # a collapsed dimension is a large finite penalty, not an error or infinity
    val = kld_to_prior(constant([[1.0], [1.0], [1.0]])).item()
    assert math.isfinite(val)
    assert val > 10.0


# ---------------------------------------------------------------- dal family

def test_dal_identical_batches_zero():
    a = constant(np.random.default_rng(3).normal(size=(5, 2)))
    assert dal(a, a).item() == 0.0


def test_dal_constant_offset_hand_value():
    ones = constant(np.ones((4, 2)))
    zeros = constant(np.zeros((4, 2)))
    assert abs(dal(ones, zeros).item() - 2.0) < 1e-12


def test_dal_matches_brute_force():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    want = np.abs(a - b).sum() / 3
    assert abs(dal(constant(a), constant(b)).item() - want) < 1e-12
    assert abs(dal_direct(constant(a), constant(b)).item() - want) < 1e-12


def test_dal_is_symmetric_and_pairing_is_by_index():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    assert dal(constant(a), constant(b)).item() == dal(constant(b), constant(a)).item()
    perm = rng.permutation(6)
    joint = dal(constant(a[perm]), constant(b[perm])).item()
    assert abs(joint - dal(constant(a), constant(b)).item()) < 1e-12
    one_sided = dal(constant(a[perm]), constant(b)).item()
    assert abs(one_sided - dal(constant(a), constant(b)).item()) > 1e-6


def test_dal_shape_mismatch():
    with pytest.raises(ValueError):
        dal(constant(np.zeros((3, 2))), constant(np.zeros((4, 2))))


# ---------------------------------------------------------------- entropy

def test_entropy_uniform_is_log_c():
    assert abs(entropy_loss(constant(np.zeros((3, 2)))).item() - math.log(2)) < 1e-12


def test_entropy_near_one_hot_is_near_zero():
    assert entropy_loss(constant([[40.0, 0.0]])).item() < 1e-12


def test_entropy_hand_value():
    logits = np.log(np.array([[0.7, 0.3]]))
    want = -(0.7 * math.log(0.7) + 0.3 * math.log(0.3))
    got = entropy_loss(constant(logits)).item()
    assert abs(got - want) < 1e-12
    assert abs(got - 0.610864) < 1e-6


def test_entropy_bounded_by_log_c():
    rng = np.random.default_rng(6)
    for c in (2, 5):
        logits = constant(rng.normal(size=(8, c)))
        val = entropy_loss(logits).item()
        assert 0.0 <= val <= math.log(c) + 1e-12


# ---------------------------------------------------------------- mcd

def test_mcd_identical_and_maximal():
    p = constant([[0.3, 0.7], [0.5, 0.5]])
    assert mcd_discrepancy(p, p).item() == 0.0
    a = constant([[1.0, 0.0]])
    b = constant([[0.0, 1.0]])
    assert abs(mcd_discrepancy(a, b).item() - 1.0) < 1e-12


def test_mcd_matches_brute_force_and_bound():
    rng = np.random.default_rng(7)
    raw = rng.random((5, 3))
    p1 = raw / raw.sum(axis=1, keepdims=True)
    raw2 = rng.random((5, 3))
    p2 = raw2 / raw2.sum(axis=1, keepdims=True)
    want = np.abs(p1 - p2).mean()
    got = mcd_discrepancy(constant(p1), constant(p2)).item()
    assert abs(got - want) < 1e-12
    assert got <= 2.0
    with pytest.raises(ValueError):
        mcd_discrepancy(constant(p1), constant(p2[:4]))


# ---------------------------------------------------------------- recon

def test_recon_hand_values_and_symmetry():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(5, 2))
    assert recon(constant(x), constant(x)).item() == 0.0
    offset = recon(constant(x + 0.37), constant(x)).item()
    assert abs(offset - 2 * 0.37) < 1e-12
    a, b = rng.normal(size=(4, 2)), rng.normal(size=(4, 2))
    want = np.abs(a - b).sum() / 4
    assert abs(recon(constant(a), constant(b)).item() - want) < 1e-12
    assert recon(constant(a), constant(b)).item() == recon(constant(b), constant(a)).item()


# ---------------------------------------------------------------- kld_direct

def test_kld_direct_identical_batches_zero():
    z = constant(np.random.default_rng(9).normal(size=(6, 3)))
    assert abs(kld_direct(z, z).item()) < 1e-12


def test_kld_direct_hand_value_mean_shift():
    z_s = constant([[-1.0], [1.0]])  # mean 0, var 1
    z_t = constant([[0.0], [2.0]])  # mean 1, var 1
    assert abs(kld_direct(z_s, z_t).item() - 0.5) < 1e-12


def test_kld_direct_matches_monte_carlo():
    rng = np.random.default_rng(10)
    z_s = rng.normal(loc=0.2, scale=1.5, size=(40, 2))
    z_t = rng.normal(loc=-0.5, scale=0.8, size=(40, 2))
    closed = kld_direct(constant(z_s), constant(z_t)).item()
    mu_s, var_s = z_s.mean(axis=0), z_s.var(axis=0)
    mu_t, var_t = z_t.mean(axis=0), z_t.var(axis=0)
    draws = rng.normal(mu_t, np.sqrt(var_t), size=(1_000_000, 2))
    mc = (_gaussian_logpdf(draws, mu_t, var_t) - _gaussian_logpdf(draws, mu_s, var_s)).sum(axis=1).mean()
    assert abs(closed - mc) < 1e-2


def test_kld_direct_agrees_with_kld_to_prior_on_standard_reference():
    standard = constant(np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]]))
    z = constant(np.random.default_rng(11).normal(size=(5, 3)))
    assert abs(kld_direct(standard, z).item() - kld_to_prior(z).item()) < 1e-9


def test_kld_direct_collapsed_dims_finite_and_small_batches_rejected():
    flat = constant(np.ones((4, 2)))
    ok = constant(np.random.default_rng(12).normal(size=(4, 2)))
    # collapsed reference: near-zero denominator -> enormous but finite
    assert math.isfinite(kld_direct(flat, ok).item())
    assert kld_direct(flat, ok).item() > 1e6
    # collapsed second argument: log-ratio penalty, much milder
    assert math.isfinite(kld_direct(ok, flat).item())
    assert kld_direct(ok, flat).item() > 10.0
    with pytest.raises(LossError):
        kld_direct(constant(np.zeros((1, 2))), ok)
    with pytest.raises(ValueError):
        kld_direct(ok, constant(np.random.default_rng(13).normal(size=(4, 3))))


# ---------------------------------------------------------------- safn

def test_safn_hand_values():
    prev = np.full((3, 1), 4.0)
    met = constant(np.full((3, 1), 5.0))
    missed = constant(np.full((3, 1), 4.0))
    assert safn_feature_norm(prev, met, 1.0).item() == 0.0
    assert abs(safn_feature_norm(prev, missed, 1.0).item() - 1.0) < 1e-12


def test_safn_no_gradient_into_previous_norms():
    prev = Tensor(np.full((3, 1), 4.0), requires_grad=True)
    with Tape():
        curr = Tensor(np.array([[4.5], [5.0], [5.5]]), requires_grad=True)
        loss = safn_feature_norm(prev, curr, 1.0)
        grads = backward(loss)
    assert curr.node in grads
    assert prev.node not in grads


def test_safn_length_mismatch():
    with pytest.raises(ValueError):
        safn_feature_norm(np.zeros((3, 1)), constant(np.zeros((4, 1))), 1.0)


def test_feature_norms_match_numpy():
    h = np.random.default_rng(14).normal(size=(6, 5))
    got = feature_norms(constant(h)).data
    want = np.linalg.norm(h, axis=1, keepdims=True)
    assert np.allclose(got, want, atol=1e-6)
    assert got.shape == (6, 1)


# ---------------------------------------------------------------- FD + weights

def _fd(build_loss, params):
    passed, max_rel = finite_difference_check_params(build_loss, params)
    assert passed, f"max relative error {max_rel}"


def test_fd_cross_entropy():
    rng = np.random.default_rng(20)
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=4)
    _fd(lambda: softmax_cross_entropy(logits, labels), [logits])


def test_fd_kld_to_prior():
    z = Tensor(np.random.default_rng(21).normal(size=(4, 3)), requires_grad=True)
    _fd(lambda: kld_to_prior(z), [z])


def test_fd_dal_and_recon_and_mcd():
    rng = np.random.default_rng(22)
    a = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    gap = rng.choice([-1.0, 1.0], size=(4, 2)) * rng.uniform(0.4, 1.0, size=(4, 2))
    b = Tensor(a.data + gap, requires_grad=True)
    _fd(lambda: dal(a, b), [a, b])
    _fd(lambda: recon(a, b), [a, b])
    _fd(lambda: mcd_discrepancy(a, b), [a, b])


def test_fd_entropy():
    logits = Tensor(np.random.default_rng(23).normal(size=(4, 3)), requires_grad=True)
    _fd(lambda: entropy_loss(logits), [logits])


def test_fd_kld_direct():
    rng = np.random.default_rng(24)
    z_s = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    z_t = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    _fd(lambda: kld_direct(z_s, z_t), [z_s, z_t])


def test_fd_safn():
    prev = np.full((4, 1), 3.0)
    curr = Tensor(np.array([[3.2], [4.1], [2.8], [3.9]]), requires_grad=True)
    _fd(lambda: safn_feature_norm(prev, curr, 1.0), [curr])


def test_fd_feature_norms_composite():
    h = Tensor(np.random.default_rng(25).normal(size=(4, 5)), requires_grad=True)
    prev = np.full((4, 1), 2.0)
    _fd(lambda: safn_feature_norm(prev, feature_norms(h), 1.0), [h])


def test_all_losses_nonnegative_on_random_inputs():
    rng = np.random.default_rng(26)
    for _ in range(20):
        z = constant(rng.normal(size=(5, 3)))
        logits = constant(rng.normal(size=(5, 3)))
        labels = rng.integers(0, 3, size=5)
        a, b = constant(rng.normal(size=(5, 2))), constant(rng.normal(size=(5, 2)))
        assert softmax_cross_entropy(logits, labels).item() >= 0.0
        assert kld_to_prior(z).item() >= 0.0
        assert entropy_loss(logits).item() >= 0.0
        assert dal(a, b).item() >= 0.0
        assert recon(a, b).item() >= 0.0
        assert kld_direct(z, constant(rng.normal(size=(5, 3)))).item() >= -1e-12


def test_loss_weights_validation():
    w = LossWeights(alpha=0.01, beta=10.0, kappa=1.0, delta_r=1.0)
    assert w.alpha == 0.01
    with pytest.raises(LossError):
        LossWeights(alpha=-0.1, beta=10.0, kappa=1.0, delta_r=1.0)
    with pytest.raises(LossError):
        LossWeights(alpha=0.1, beta=10.0, kappa=1.0, delta_r=-2.0)
