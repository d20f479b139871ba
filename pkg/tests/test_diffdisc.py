import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locoskills import diffdisc as dd
from locoskills.numkit import Adam, grad_check, sigmoid

F2 = 12


def _disc(seed=0, label_blind=False, hidden=(32, 32)):
    d = dd.DiffusionDiscriminator.build(F2, hidden, rng=seed)
    if label_blind:
        d.net.layers[0].weight[:, -2:] = 0.0
    return d


class _Oracle:
    """Stands in for the noise network and returns the true noise."""

    def __init__(self, eps):
        self.eps = eps
        self.output_dim = eps.shape[-1]

    def predict(self, inp):
        return self.eps.reshape(-1, self.output_dim)


def test_schedule_shape_and_range():
    s = dd.DiffusionSchedule()
    assert s.alpha_bar.shape == (100,)
    assert np.all(np.diff(s.alpha_bar) < 0) and 0 < s.alpha_bar[-1] < s.alpha_bar[0] < 1
    assert s.alpha_bar_at(1) == pytest.approx(1 - 1e-4, abs=1e-15)
    for bad in (0, 101):
        with pytest.raises(ValueError):
            s.alpha_bar_at(bad)


def test_add_noise_limits():
    rng = np.random.default_rng(0)
    x, eps = rng.normal(size=12), rng.normal(size=12)
    assert np.array_equal(dd.add_noise(x, 1.0, eps), x)
    s = dd.DiffusionSchedule()
    ab = s.alpha_bar_at(40)
    np.testing.assert_allclose(dd.noise_transition(s, np.zeros(12), 40, eps), np.sqrt(1 - ab) * eps, atol=1e-15)


def test_noise_transition_variance_monte_carlo():
    s = dd.DiffusionSchedule()
    rng = np.random.default_rng(1)
    x, t, n = 1.7, 60, 100_000
    out = dd.noise_transition(s, np.full(n, x), t, rng.standard_normal(n))
    ab = s.alpha_bar_at(t)
    second_moment = ab * x * x + (1 - ab)
    # standard error of a second moment of a N(m, v) sample is sqrt((2v^2 + 4 m^2 v) / n)
    m, v = np.sqrt(ab) * x, 1 - ab
    se = np.sqrt((2 * v * v + 4 * m * m * v) / n)
    assert abs(np.mean(out**2) - second_moment) < 4 * se


def test_stratified_timesteps_cover_each_stratum():
    d = _disc()
    t, eps = d.sample_noise(1000, np.random.default_rng(2))
    assert t.shape == (1000, 4) and eps.shape == (1000, 4, F2)
    for j in range(4):
        assert np.all((t[:, j] >= 25 * j + 1) & (t[:, j] <= 25 * (j + 1)))


def test_zero_network_loss_is_expected_noise_energy():
    d = _disc()
    for p in d.params():
        p[...] = 0.0
    rng = np.random.default_rng(3)
    n = 20_000
    loss = dd.diffusion_loss(d, rng.normal(size=(n, F2)), "dataset", rng)
    # each row averages k=4 chi-square(12) draws: variance 2*12/4
    se = np.sqrt(2 * F2 / 4 / n)
    assert abs(loss.mean() - F2) < 4 * se
    assert np.all(loss >= 0)


def test_oracle_network_gives_zero_loss():
    d = _disc()
    rng = np.random.default_rng(4)
    x = rng.normal(size=(7, F2))
    t, eps = d.sample_noise(7, rng)
    d.net = _Oracle(eps)
    assert np.all(dd.diffusion_loss(d, x, "policy", noise=(t, eps)) == 0.0)


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        dd.diffusion_loss(_disc(), np.zeros((1, F2)), "expert", np.random.default_rng(0))


def test_label_blind_network_scores_exactly_one_half():
    d = _disc(label_blind=True)
    rng = np.random.default_rng(5)
    x = rng.normal(size=(500, F2))
    assert np.all(dd.diffusion_discriminate(d, x, rng) == 0.5)
    assert np.all(dd.diffusion_reward(d, x, rng) == np.log(2.0))


def test_sigma_arithmetic():
    assert sigmoid(np.log(3.0)) == pytest.approx(0.75, abs=1e-15)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_label_swap_complements_score(seed):
    d = _disc(seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(64, F2))
    noise = d.sample_noise(64, rng)
    p = dd.diffusion_discriminate(d, x, noise=noise)
    d.label_dataset, d.label_policy = d.label_policy, d.label_dataset
    q = dd.diffusion_discriminate(d, x, noise=noise)
    np.testing.assert_allclose(p + q, 1.0, atol=1e-12)
    assert np.all((p > 0) & (p < 1))


def test_reward_monotone_in_loss_gap():
    d = _disc(6)
    rng = np.random.default_rng(6)
    x = rng.normal(size=(200, F2))
    noise = d.sample_noise(200, rng)
    gap = dd.loss_gap(d, x, noise=noise)
    r = dd.diffusion_reward(d, x, noise=noise)
    order = np.argsort(gap)
    assert np.all(np.diff(r[order]) >= 0)


def test_label_blind_training_loss_is_two_log_two():
    d = _disc(7, label_blind=True)
    d.weight_decay = 0.0
    rng = np.random.default_rng(7)
    loss, _ = dd.train_loss(d, rng.normal(size=(8, F2)), rng.normal(size=(8, F2)), rng)
    assert loss == pytest.approx(2 * np.log(2), abs=1e-14)


def test_training_gradient_with_frozen_noise():
    d = _disc(8, hidden=(16, 16))
    rng = np.random.default_rng(8)
    xm, xp = rng.normal(size=(6, F2)), rng.normal(size=(6, F2))
    noise = d.sample_noise(12, rng)
    rep = grad_check(d.params(), lambda: dd.train_loss(d, xm, xp, noise=noise), 1e-4)
    assert rep.passed, rep.max_rel_error


def test_training_separates_synthetic_distributions():
    d = _disc(9)
    rng = np.random.default_rng(9)
    opt = Adam(d.params(), lr=1e-3)
    xm = rng.normal(size=(128, F2)) + 1.5
    xp = rng.normal(size=(128, F2)) - 1.5
    fixed = d.sample_noise(256, np.random.default_rng(99))
    start = dd.train_loss(d, xm, xp, noise=fixed)[0]
    for _ in range(200):
        opt.step(dd.train_loss(d, xm, xp, rng)[1])
    assert dd.train_loss(d, xm, xp, noise=fixed)[0] < start
    with pytest.raises(ValueError):
        dd.train_loss(d, xm[:0], xp, rng)
