import numpy as np
import pytest
from scipy import integrate

from latseq.env import Transition
from latseq.ppo import (CategoricalPolicy, GaussianPolicy, PpoConfig, PpoLearner, ValueFunction, build_batch,
                        clipped_surrogate_grad, gae_from_arrays, normalize_advantages)


def test_gae_hand_case():
    # gamma 0.5, lambda 1: discounted returns minus values
    r = np.array([0.0, 0.0, 1.0])
    v = np.array([0.1, 0.2, 0.3])
    v_next = np.array([0.2, 0.3, 9.9])
    adv, ret = gae_from_arrays(r, v, v_next, np.array([0, 0, 1.0]), 0.5, 1.0)
    np.testing.assert_allclose(ret, [0.25, 0.5, 1.0])
    np.testing.assert_allclose(adv, ret - v)


def test_gae_lambda_zero_is_td_error():
    r = np.array([1.0, 2.0])
    v = np.array([0.5, 0.5])
    v_next = np.array([0.5, 4.0])
    adv, _ = gae_from_arrays(r, v, v_next, np.array([0.0, 0.0]), 0.9, 0.0)
    np.testing.assert_allclose(adv, [1.0 + 0.45 - 0.5, 2.0 + 3.6 - 0.5])


def test_clipped_gradient_cases():
    ratio = np.array([1.5, 1.5, 0.5, 0.5, 1.0, 1.1])
    adv = np.array([1.0, -1.0, 1.0, -1.0, 2.0, -2.0])
    g, clipped = clipped_surrogate_grad(ratio, adv, 0.2)
    assert clipped.tolist() == [True, False, False, True, False, False]
    np.testing.assert_allclose(g, -ratio * adv / 6 * ~clipped)


def test_clipped_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    logp = rng.normal(0, 0.3, 50)
    adv = rng.standard_normal(50)
    clip = 0.2

    def loss(lp):
        r = np.exp(lp)
        return -np.mean(np.minimum(r * adv, np.clip(r, 1 - clip, 1 + clip) * adv))

    g, _ = clipped_surrogate_grad(np.exp(logp), adv, clip)
    eps = 1e-7
    for i in range(50):
        e = np.zeros(50)
        e[i] = eps
        num = (loss(logp + e) - loss(logp - e)) / (2 * eps)
        if abs(abs(np.exp(logp[i]) - 1) - clip) > 1e-4:
            assert num == pytest.approx(g[i], abs=1e-6)


def test_squashed_density_integrates_to_one():
    pol = GaussianPolicy(1, 1, delta=0.1, hidden=4, init_log_std=-0.5, rng=np.random.default_rng(0))
    s = np.zeros((1, 1))

    def density(a):
        u = np.arctanh(a / 0.1)
        return np.exp(pol.log_prob(s, np.array([[u]]))[0][0])

    total, _ = integrate.quad(density, -0.1 + 1e-12, 0.1 - 1e-12, limit=200)
    assert total == pytest.approx(1.0, abs=1e-3)


def test_gaussian_backward_matches_finite_difference():
    rng = np.random.default_rng(3)
    pol = GaussianPolicy(3, 2, delta=0.5, hidden=5, rng=rng)
    S = rng.standard_normal((4, 3))
    U = rng.standard_normal((4, 2))
    w = rng.standard_normal(4)
    _, cache = pol.log_prob(S, U)
    grads = pol.backward(cache, w)
    eps = 1e-6
    for p, g in zip(pol.parameters(), grads):
        for i in list(np.ndindex(*p.shape))[:6]:
            old = p[i]
            p[i] = old + eps
            up = w @ pol.log_prob(S, U)[0]
            p[i] = old - eps
            down = w @ pol.log_prob(S, U)[0]
            p[i] = old
            assert g[i] == pytest.approx((up - down) / (2 * eps), rel=1e-5, abs=1e-7)


def test_categorical_policy_log_probs_normalised():
    pol = CategoricalPolicy(2, 5, hidden=4, rng=np.random.default_rng(0))
    s = np.ones((1, 2))
    lp = [pol.log_prob(s, np.array([a]))[0][0] for a in range(5)]
    assert np.exp(lp).sum() == pytest.approx(1.0)


def test_normalize_advantages_constant_input():
    assert normalize_advantages([2.0, 2.0]).tolist() == [0.0, 0.0]


def bandit_update(learner, rng, target, n=256):
    s = np.zeros((n, 1))
    a, u, logp = learner.policy.act(s, rng)
    r = -(a[:, 0] - target) ** 2
    trajs = [[Transition(s=s[i], a=a[i], s_next=s[i], x_next=None, valid=True, done=True, reward=float(r[i]),
                         sample=u[i], log_prob=float(logp[i]))] for i in range(n)]
    learner.update(build_batch(trajs, learner.value_fn, learner.config))


def test_ppo_bandit_moves_toward_target():
    rng = np.random.default_rng(0)
    cfg = PpoConfig(lr=1e-3, epochs=4, minibatch_size=64, hidden=16)
    pol = GaussianPolicy(1, 1, delta=1.0, hidden=16, rng=rng)
    learner = PpoLearner(pol, ValueFunction(1, 16, rng=rng), cfg, rng=rng)
    before = abs(pol.mean_action(np.zeros(1))[0, 0] - 0.4)
    for _ in range(30):
        bandit_update(learner, rng, 0.4)
    assert abs(pol.mean_action(np.zeros(1))[0, 0] - 0.4) < before


def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip_ratio=1.5)
