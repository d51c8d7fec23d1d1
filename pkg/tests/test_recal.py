import numpy as np
import pytest

from calbound import (
    GaussianPosterior,
    PbrConfig,
    PredictionSet,
    RecalMap,
    Rng,
    ValidationError,
    apply_recal,
    brier_score,
    pbr_gradient,
    pbr_objective,
    recalibrate_set,
    softmax_cross_entropy,
    temperature_scaling_fit,
    train_pbr,
)
from calbound.recal import identity_params, param_dim
from tests.conftest import random_prediction_set


def test_param_dims_per_family():
    assert param_dim("temperature", 5) == 1
    assert param_dim("vector_scale", 5) == 10
    assert param_dim("affine", 5) == 30
    with pytest.raises(ValidationError):
        param_dim("spline", 3)


def test_identity_params_are_fixed_points(gen):
    probs = gen.dirichlet(np.ones(4), 50)
    for family in ("temperature", "vector_scale", "affine"):
        m = RecalMap.identity(family, 4)
        assert np.allclose(apply_recal(m, probs), probs, atol=1e-9)
        assert np.array_equal(m.params, identity_params(family, 4))


def test_temperature_two_flattens_hand_example():
    out = apply_recal(RecalMap.temperature(2.0), np.array([0.8, 0.2]))
    assert np.allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_temperature_constructor_validates_and_round_trips():
    m = RecalMap.temperature(1.7, num_classes=3)
    assert m.t == pytest.approx(1.7)
    with pytest.raises(ValidationError):
        RecalMap.temperature(0.0)
    clone = RecalMap.from_dict(m.to_dict())
    assert clone == m
    assert m.to_dict()["t"] == pytest.approx(1.7)


def test_temperature_below_one_sharpens(gen):
    probs = gen.dirichlet(np.ones(3), 100)
    sharp = apply_recal(RecalMap.temperature(0.5, 3), probs)
    assert (sharp.max(axis=1) >= probs.max(axis=1) - 1e-12).all()


def test_vector_scale_and_affine_apply(gen):
    probs = gen.dirichlet(np.ones(3), 20)
    w, b = np.array([2.0, 1.0, 0.5]), np.array([0.1, 0.0, -0.1])
    mv = RecalMap.vector_scale(w, b)
    z = np.log(probs)
    expect = np.exp(z * w + b)
    expect /= expect.sum(axis=1, keepdims=True)
    assert np.allclose(apply_recal(mv, probs), expect, atol=1e-12)

    mat = np.eye(3) + 0.1
    ma = RecalMap.affine(mat, b)
    expect = np.exp(z @ mat.T + b)
    expect /= expect.sum(axis=1, keepdims=True)
    assert np.allclose(apply_recal(ma, probs), expect, atol=1e-12)


def test_apply_recal_single_row_matches_batch(gen):
    probs = gen.dirichlet(np.ones(4), 5)
    m = RecalMap.vector_scale(np.array([1.5, 1.0, 0.7, 1.1]), np.zeros(4))
    batch = apply_recal(m, probs)
    rows = np.stack([apply_recal(m, row) for row in probs])
    assert np.allclose(batch, rows, atol=1e-12)


def test_recalibrate_set_keeps_labels(gen):
    data = random_prediction_set(gen, 40, 3)
    out = recalibrate_set(RecalMap.temperature(2.0, 3), data)
    assert np.array_equal(out.labels, data.labels)
    assert out.n == data.n


def test_brier_and_cross_entropy_hand_values():
    ps = PredictionSet.from_probs([[0.8, 0.2]], [0])
    assert brier_score(ps) == pytest.approx(0.04 + 0.04, abs=1e-12)
    assert softmax_cross_entropy(ps) == pytest.approx(-np.log(0.8), abs=1e-12)
    perfect = PredictionSet.from_probs([[1.0, 0.0]], [0])
    assert brier_score(perfect) == 0.0


def test_brier_decreases_when_confidence_matches_truth():
    wrong = PredictionSet.from_probs([[0.9, 0.1]], [1])
    right = PredictionSet.from_probs([[0.9, 0.1]], [0])
    assert brier_score(right) < brier_score(wrong)


def test_gaussian_posterior_helpers():
    p = GaussianPosterior.standard(3)
    assert p.dim == 3
    assert np.allclose(p.sigma, 1.0)
    assert p.kl_to(p) == 0.0
    q = GaussianPosterior.at(np.array([1.0, 0.0, 0.0]))
    assert q.kl_to(p) == pytest.approx(0.5, abs=1e-12)
    clone = GaussianPosterior.from_dict(q.to_dict())
    assert np.allclose(clone.mu, q.mu) and np.allclose(clone.log_sigma, q.log_sigma)


def test_gaussian_posterior_sampling_is_seeded():
    p = GaussianPosterior.standard(4)
    a = p.sample(Rng(3), 6)
    b = p.sample(Rng(3), 6)
    assert a.shape == (6, 4)
    assert np.array_equal(a, b)


def test_pbr_config_validation_and_round_trip():
    cfg = PbrConfig(family="vector_scale", alpha=0.5, mc_samples=2, seed=9)
    clone = PbrConfig.from_dict(cfg.to_dict())
    assert clone == cfg
    with pytest.raises(ValidationError):
        PbrConfig(alpha=-0.1)
    with pytest.raises(ValidationError):
        PbrConfig(family="nope")
    with pytest.raises(ValidationError):
        PbrConfig(objective="hinge")
    with pytest.raises(ValidationError):
        PbrConfig(mc_samples=0)


def test_objective_is_deterministic_given_rng(gen):
    data = random_prediction_set(gen, 60, 3)
    cfg = PbrConfig(family="temperature", alpha=0.25)
    post = GaussianPosterior.at(np.array([0.3]), sigma=0.8)
    prior = GaussianPosterior.standard(1)
    v1 = pbr_objective(post, prior, data, cfg, Rng(5))
    v2 = pbr_objective(post, prior, data, cfg, Rng(5))
    assert v1 == v2
    # alpha scales only the KL part
    cfg0 = PbrConfig(family="temperature", alpha=0.0)
    v0 = pbr_objective(post, prior, data, cfg0, Rng(5))
    assert v1 == pytest.approx(v0 + 0.25 * post.kl_to(prior) / data.n, abs=1e-12)


def test_gradient_matches_finite_differences(gen):
    # smaller sibling of the acceptance sweep, one config per family
    h = 1e-5
    for family in ("temperature", "vector_scale", "affine"):
        data = random_prediction_set(gen, 30, 3)
        dim = param_dim(family, 3)
        cfg = PbrConfig(family=family, alpha=0.3, mc_samples=3, objective="brier_plus_loss")
        post = GaussianPosterior(
            gen.normal(0.0, 0.3, dim), gen.normal(-0.5, 0.2, dim)
        )
        prior = GaussianPosterior.standard(dim)
        grad = pbr_gradient(post, prior, data, cfg, Rng(11))
        theta = np.concatenate([post.mu, post.log_sigma])
        for j in (0, dim - 1, dim, 2 * dim - 1):
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            pu = GaussianPosterior(up[:dim], up[dim:])
            pd = GaussianPosterior(dn[:dim], dn[dim:])
            fd = (
                pbr_objective(pu, prior, data, cfg, Rng(11))
                - pbr_objective(pd, prior, data, cfg, Rng(11))
            ) / (2 * h)
            assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def test_train_pbr_improves_objective_and_is_deterministic(gen):
    # sharpened reports on calibrated labels: the identity map is clearly
    # suboptimal, so the fit must beat it by more than Monte Carlo noise
    probs = gen.dirichlet(np.ones(3), 400)
    u = gen.uniform(size=400)
    labels = np.minimum((u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), 2)
    sharp = probs**2.0
    sharp /= sharp.sum(axis=1, keepdims=True)
    data = PredictionSet.from_probs(sharp, labels)

    cfg = PbrConfig(family="temperature", alpha=0.25, seed=4, max_iters=200)
    res = train_pbr(data, cfg)
    assert brier_score(recalibrate_set(res.map, data)) < brier_score(data) - 0.01
    assert res.steps <= 200
    assert res.kl >= 0.0
    again = train_pbr(data, cfg)
    assert np.allclose(res.posterior.mu, again.posterior.mu)
    assert res.final_objective == again.final_objective
    assert res.map == again.map


def test_train_pbr_zero_alpha_ignores_prior(gen):
    data = random_prediction_set(gen, 80, 2)
    cfg0 = PbrConfig(alpha=0.0, seed=1, max_iters=60)
    res = train_pbr(data, cfg0)
    assert res.final_objective <= brier_score(data) + 0.05


def test_temperature_scaling_recovers_distortion():
    gen = np.random.default_rng(42)
    probs = gen.dirichlet(np.ones(3), 4000)
    u = gen.uniform(size=4000)
    labels = np.minimum((u[:, None] >= np.cumsum(probs, axis=1)).sum(axis=1), 2)
    # report sharpened probabilities; the fit should undo the sharpening
    sharp = probs ** 2.0
    sharp /= sharp.sum(axis=1, keepdims=True)
    data = PredictionSet.from_probs(sharp, labels)
    m = temperature_scaling_fit(data)
    assert 1.6 <= m.t <= 2.4
    assert softmax_cross_entropy(recalibrate_set(m, data)) <= softmax_cross_entropy(data)


def test_temperature_scaling_single_class_falls_back():
    data = PredictionSet.from_probs([[0.7, 0.3], [0.6, 0.4]], [0, 0])
    with pytest.warns(UserWarning):
        m = temperature_scaling_fit(data)
    assert m.t == 1.0
