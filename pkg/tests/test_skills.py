import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locoskills import skills
from locoskills.numkit import Adam, FeedForwardNet, Layer, grad_check
from locoskills.policy import GaussianPolicy

vec7 = st.lists(st.floats(-100, 100, allow_nan=False), min_size=7, max_size=7).filter(
    lambda v: np.linalg.norm(v) > 1e-6
)


def test_sampled_latents_are_unit_and_centred():
    z = skills.sample_latent(np.random.default_rng(0), 100_000)
    assert z.shape == (100_000, 7)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-12)
    # each coordinate of a uniform point on S^6 has variance 1/7
    se = np.sqrt(1.0 / 7.0 / len(z))
    assert np.all(np.abs(z.mean(axis=0)) < 4 * se)


def test_sample_latent_reproducible():
    a = skills.sample_latent(np.random.default_rng(4))
    b = skills.sample_latent(np.random.default_rng(4))
    assert np.array_equal(a, b) and a.shape == (7,)


def test_project_latent_examples():
    np.testing.assert_allclose(skills.project_latent([3, 4, 0, 0, 0, 0, 0]), [0.6, 0.8, 0, 0, 0, 0, 0], atol=1e-15)


@given(vec7, st.floats(1e-3, 1e3))
def test_project_latent_idempotent_and_scale_invariant(v, scale):
    z = skills.project_latent(np.array(v))
    assert np.linalg.norm(z) == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(skills.project_latent(z), z, atol=1e-15)
    np.testing.assert_allclose(skills.project_latent(scale * np.array(v)), z, atol=1e-12)


def test_project_latent_holds_previous_on_zero(caplog):
    prev = skills.sample_latent(np.random.default_rng(0), 2)
    raw = np.array([[0.0] * 7, [1.0, 0, 0, 0, 0, 0, 0]])
    with caplog.at_level(logging.WARNING):
        out = skills.project_latent(raw, prev)
    assert np.array_equal(out[0], prev[0])
    assert np.array_equal(out[1], raw[1])
    assert "holding previous" in caplog.text
    with pytest.raises(ValueError):
        skills.project_latent(np.zeros(7))


@given(vec7, vec7)
def test_latent_distance_properties(a, b):
    z1, z2 = skills.project_latent(np.array(a)), skills.project_latent(np.array(b))
    assert skills.latent_distance(z1, z1) == pytest.approx(0.0, abs=1e-15)
    assert skills.latent_distance(z1, -z1) == pytest.approx(1.0, abs=1e-15)
    assert -1e-15 <= skills.latent_distance(z1, z2) <= 1.0 + 1e-15


def _fixed_encoder(direction):
    # identity-free head: a single linear layer whose output is constant = direction
    w = np.zeros((7, 12))
    return skills.SkillEncoder(FeedForwardNet([Layer(w, np.asarray(direction, dtype=float), "identity")]), 5.0)


def test_skill_reward_examples():
    z = skills.sample_latent(np.random.default_rng(1))
    x = np.zeros((1, 12))
    assert skills.skill_reward(_fixed_encoder(z), x, z)[0] == pytest.approx(5.0, abs=1e-12)
    assert skills.skill_reward(_fixed_encoder(-z), x, z)[0] == pytest.approx(-5.0, abs=1e-12)
    perp = np.zeros(7)
    perp[np.argmin(np.abs(z))] = 1.0
    perp -= perp @ z * z
    assert skills.skill_reward(_fixed_encoder(perp), x, z)[0] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(vec7, vec7)
def test_skill_reward_argmax_is_mu(mu_raw, other_raw):
    mu = skills.project_latent(np.array(mu_raw))
    other = skills.project_latent(np.array(other_raw))
    enc = _fixed_encoder(mu)
    x = np.zeros((1, 12))
    assert skills.skill_reward(enc, x, other)[0] <= skills.skill_reward(enc, x, mu)[0] + 1e-12


def test_encoder_loss_at_optimum():
    z = skills.sample_latent(np.random.default_rng(2))
    enc = _fixed_encoder(3.0 * z)
    loss, grads = skills.encoder_loss(enc, np.zeros((4, 12)), np.tile(z, (4, 1)))
    assert loss == pytest.approx(-5.0, abs=1e-12)
    # the bias gradient is purely radial at the optimum, so it has no tangent component
    gb = grads[1]
    np.testing.assert_allclose(gb - (gb @ z) * z, 0.0, atol=1e-12)


def test_encoder_gradient_and_training():
    rng = np.random.default_rng(3)
    enc = skills.SkillEncoder.build(12, hidden=(16, 16), rng=rng)
    x = rng.normal(size=(64, 12))
    z = skills.sample_latent(rng, 64)
    assert grad_check(enc.params(), lambda: skills.encoder_loss(enc, x, z), 1e-4).passed
    opt = Adam(enc.params(), lr=1e-3)
    first = skills.encoder_loss(enc, x, z)[0]
    for _ in range(100):
        opt.step(skills.encoder_loss(enc, x, z)[1])
    assert skills.encoder_loss(enc, x, z)[0] < first


def test_diversity_loss_guard_and_ignored_latent(caplog):
    rng = np.random.default_rng(4)
    pol = GaussianPolicy.build(17, 4, (8,), rng=rng)
    obs = rng.normal(size=(5, 10))
    z = skills.sample_latent(rng, 5)
    with caplog.at_level(logging.WARNING):
        loss, grads = skills.diversity_loss(pol, obs, z, z)
    assert loss == 0.0 and all(np.all(g == 0) for g in grads)
    assert "skipped" in caplog.text
    # zero the latent columns so the policy ignores z entirely
    pol.mean_net.layers[0].weight[:, 10:] = 0.0
    loss, _ = skills.diversity_loss(pol, obs, z, skills.sample_latent(rng, 5))
    assert loss == pytest.approx(1.0, abs=1e-15)


def test_diversity_loss_zero_when_kl_equals_distance():
    # mu = a z with unit std gives KL = 0.5 a^2 |z1 - z2|^2 = 2 a^2 D_z on the sphere,
    # so a = 1/sqrt(2) makes KL equal to D_z for every pair
    w = np.zeros((7, 17))
    w[:, 10:] = np.eye(7) / np.sqrt(2.0)
    pol = GaussianPolicy(FeedForwardNet([Layer(w, np.zeros(7), "identity")]), np.zeros(7))
    rng = np.random.default_rng(5)
    loss, _ = skills.diversity_loss(pol, rng.normal(size=(6, 10)), skills.sample_latent(rng, 6),
                                    skills.sample_latent(rng, 6))
    assert loss == pytest.approx(0.0, abs=1e-25)


def test_diversity_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    pol = GaussianPolicy.build(17, 4, (12, 8), rng=rng)
    pol.mean_net.layers[-1].weight *= 100.0
    obs = rng.normal(size=(8, 10))
    z1, z2 = skills.sample_latent(rng, 8), skills.sample_latent(rng, 8)
    assert grad_check(pol.params(), lambda: skills.diversity_loss(pol, obs, z1, z2), 1e-4).passed
