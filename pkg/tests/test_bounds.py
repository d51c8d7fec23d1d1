import json
import math

import numpy as np
import pytest

from calbound import (
    BinarySpec,
    BoundCertificate,
    BoundInputs,
    BoundKind,
    ConfidenceLaw,
    MiscalibrationMap1D,
    Rng,
    ValidationError,
    bias_recal_bound,
    ce_k_bias_bound,
    evaluate_bound,
    gen_recal_bound,
    heuristic_lambda,
    joint_acc_tce_bound,
    kl_gaussian_diag,
    mc_validate_bound,
    optimize_lambda,
    pac_bias_bound_train,
    total_bias_bound_test,
)

THM1 = BoundInputs(n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0, lam=100.0)


def test_total_bias_worked_example():
    cert = total_bias_bound_test(THM1)
    assert cert.value == pytest.approx(0.4992720407915345, abs=1e-12)
    assert cert.binning_term == pytest.approx(0.2, abs=1e-12)
    assert cert.lambda_used == 100.0


def test_pac_train_adds_kl_over_lambda():
    cert = pac_bias_bound_train(
        BoundInputs(n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0, lam=100.0, kl=10.0)
    )
    assert cert.value == pytest.approx(0.4992720407915345 + 0.1, abs=1e-12)


def test_ce_k_worked_example():
    cert = ce_k_bias_bound(
        BoundInputs(
            n=10_000, num_bins=25, epsilon=0.05, lipschitz=1.0, lam=500.0, num_classes=2
        )
    )
    assert cert.value == pytest.approx(0.9753061826031025, abs=1e-12)
    assert cert.binning_term == pytest.approx(0.8, abs=1e-12)


def test_gen_recal_worked_example():
    cert = gen_recal_bound(
        BoundInputs(n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0, lam=100.0, kl=0.0)
    )
    assert cert.value == pytest.approx(0.4992720407915345, abs=1e-12)
    assert cert.binning_term == 0.0


def test_bias_recal_worked_example():
    cert = bias_recal_bound(
        BoundInputs(n=1, num_bins=1, epsilon=math.exp(-1), lipschitz=0.0, lam=1.0)
    )
    assert cert.value == pytest.approx(4.693147180559945, abs=1e-12)


def test_joint_worked_example():
    cert = joint_acc_tce_bound(
        BoundInputs(n=1000, num_bins=1, epsilon=0.05, lipschitz=0.0, lam=10.0),
        empirical_term=0.0,
    )
    # components: 2 + (2 ln2 + 65*100/8000 + 3 ln 40) / 10
    expect = 2.0 + (2 * math.log(2) + 0.8125 + 3 * math.log(40.0)) / 10.0
    assert cert.value == pytest.approx(expect, abs=1e-12)
    assert cert.value == pytest.approx(3.32654327234617, abs=1e-12)


def test_density_assumption_halves_the_variance_term():
    loose = total_bias_bound_test(THM1)
    tight = total_bias_bound_test(
        BoundInputs(
            n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0, lam=100.0, assume_density=True
        )
    )
    stat_gap = loose.statistical_term - tight.statistical_term
    # 2/n vs 1/(2n), scaled by lambda
    assert stat_gap == pytest.approx((2.0 / 1000 - 0.5 / 1000) * 100.0, abs=1e-12)
    assert tight.value < loose.value


def test_epsilon_tightening_raises_every_bound():
    for make in (total_bias_bound_test, gen_recal_bound, bias_recal_bound):
        loose = make(BoundInputs(n=500, num_bins=5, epsilon=0.1, lipschitz=1.0, lam=50.0))
        tight = make(BoundInputs(n=500, num_bins=5, epsilon=0.01, lipschitz=1.0, lam=50.0))
        assert tight.value > loose.value


def test_heuristic_lambda_is_root_of_bn():
    assert heuristic_lambda(1000, 10) == pytest.approx(100.0)
    assert heuristic_lambda(10_000, 25) == pytest.approx(500.0)


def test_optimize_lambda_beats_any_fixed_choice(gen):
    for _ in range(30):
        inputs = BoundInputs(
            n=int(gen.integers(10, 10**6)),
            num_bins=int(gen.integers(1, 100)),
            epsilon=float(gen.uniform(0.001, 0.5)),
            lipschitz=float(gen.uniform(0.0, 2.0)),
            kl=float(gen.uniform(0.0, 30.0)),
            lam="auto",
        )
        star = optimize_lambda(BoundKind.PacBiasTrain, inputs)
        best = evaluate_bound(BoundKind.PacBiasTrain, inputs).value
        for lam in (star / 7.0, star / 2.0, star * 2.0, star * 7.0):
            trial = BoundInputs(**{**inputs.__dict__, "lam": lam})
            assert best <= evaluate_bound(BoundKind.PacBiasTrain, trial).value + 1e-12


def test_optimized_is_default_and_recorded():
    cert = total_bias_bound_test(
        BoundInputs(n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0)
    )
    star = optimize_lambda(
        BoundKind.TotalBiasTest, BoundInputs(n=1000, num_bins=10, epsilon=0.05, lipschitz=1.0)
    )
    assert cert.lambda_used == pytest.approx(star)
    assert cert.value <= total_bias_bound_test(THM1).value


def test_input_validation():
    with pytest.raises(ValidationError):
        BoundInputs(n=0, num_bins=10, epsilon=0.05)
    with pytest.raises(ValidationError):
        BoundInputs(n=10, num_bins=0, epsilon=0.05)
    with pytest.raises(ValidationError):
        BoundInputs(n=10, num_bins=2, epsilon=0.0)
    with pytest.raises(ValidationError):
        BoundInputs(n=10, num_bins=2, epsilon=1.0)
    with pytest.raises(ValidationError):
        BoundInputs(n=10, num_bins=2, epsilon=0.05, kl=-1.0)
    with pytest.raises(ValidationError):
        BoundInputs(n=10, num_bins=2, epsilon=0.05, lam=0.0)


def test_kind_specific_rejections():
    with pytest.raises(ValidationError):
        # the test-split bound has no posterior, so kl must stay 0
        total_bias_bound_test(BoundInputs(n=10, num_bins=2, epsilon=0.05, kl=1.0))
    with pytest.raises(ValidationError):
        ce_k_bias_bound(BoundInputs(n=10, num_bins=2, epsilon=0.05))  # needs num_classes
    with pytest.raises(ValidationError):
        evaluate_bound(
            BoundKind.GenRecal,
            BoundInputs(n=10, num_bins=2, epsilon=0.05),
            empirical_term=0.5,
        )
    with pytest.raises(ValidationError):
        joint_acc_tce_bound(BoundInputs(n=10, num_bins=2, epsilon=0.05), empirical_term=-0.1)


def test_certificate_serialization_round_trip():
    cert = total_bias_bound_test(THM1)
    payload = json.loads(cert.to_json())
    assert payload["bound_kind"] == "total_bias_test"
    assert payload["value"] == pytest.approx(cert.value)
    clone = BoundCertificate.from_dict(payload)
    assert clone.value == cert.value and clone.kind == cert.kind


def test_kl_gaussian_diag_worked_examples():
    assert kl_gaussian_diag(
        np.array([0.0]), np.array([1.0]), np.array([1.0]), np.array([1.0])
    ) == pytest.approx(0.5, abs=1e-12)
    assert kl_gaussian_diag(
        np.array([0.0]), np.array([4.0]), np.array([0.0]), np.array([1.0])
    ) == pytest.approx(0.8068528194400547, abs=1e-12)
    same = kl_gaussian_diag(
        np.array([0.3, -1.0]), np.array([2.0, 0.5]), np.array([0.3, -1.0]), np.array([2.0, 0.5])
    )
    assert same == pytest.approx(0.0, abs=1e-12)


def test_kl_gaussian_diag_is_additive_over_dimensions(gen):
    mu_q, var_q = gen.normal(size=3), gen.uniform(0.2, 2.0, 3)
    mu_p, var_p = gen.normal(size=3), gen.uniform(0.2, 2.0, 3)
    total = kl_gaussian_diag(mu_q, var_q, mu_p, var_p)
    parts = sum(
        kl_gaussian_diag(mu_q[i : i + 1], var_q[i : i + 1], mu_p[i : i + 1], var_p[i : i + 1])
        for i in range(3)
    )
    assert total == pytest.approx(parts, abs=1e-12)


def test_mc_validate_only_accepts_single_split_bias_kinds():
    spec = BinarySpec(
        ConfidenceLaw.uniform(0.55, 0.95), MiscalibrationMap1D.sine(0.1, 2.0), 200, Rng(3)
    )
    with pytest.raises(ValidationError):
        mc_validate_bound(BoundKind.GenRecal, spec, 5, 0.05, trials=3)
    res = mc_validate_bound(BoundKind.TotalBiasTest, spec, 5, 0.05, trials=8)
    assert res.deviations.shape == (8,)
    assert 0.0 <= res.coverage <= 1.0
    again = mc_validate_bound(BoundKind.TotalBiasTest, spec, 5, 0.05, trials=8)
    assert np.array_equal(res.deviations, again.deviations)
