import math

import numpy as np
import pytest

from tests import oracles
from tools.measure_core import (
    CovNotPD,
    DimensionMismatch,
    Estimate,
    MeasureError,
    MixtureSpec,
    NonPositiveWeight,
    NotSingleGaussian,
    WeightsNotNormalized,
    combine_mixtures,
    fisher_information_mc,
    gaussian_fit_entropy,
    log_relative_density,
    mixture_moments,
    relative_entropy_closed,
    relative_entropy_mc,
    sample,
    score,
    shannon_entropy_mc,
    validate,
)


def bimodal_1d():
    return MixtureSpec.from_components(1, [(0.5, [2.0], [[0.25]]), (0.5, [-2.0], [[0.25]])])


def test_validate_rejects_weights_not_summing_to_one():
    spec = MixtureSpec.from_components(1, [(0.9, [0.0], [[1.0]])])

    with pytest.raises(WeightsNotNormalized):
        validate(spec)


def test_validate_reports_component_of_bad_weight():
    spec = MixtureSpec.from_components(1, [(1.5, [0.0], [[1.0]]), (-0.5, [1.0], [[1.0]])])

    with pytest.raises(NonPositiveWeight) as error:
        validate(spec)

    assert error.value.component == 1


def test_validate_rejects_non_positive_definite_cov():
    spec = MixtureSpec.from_components(
        2,
        [(0.5, [0.0, 0.0], np.eye(2)), (0.5, [1.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])],
    )

    with pytest.raises(CovNotPD) as error:
        validate(spec)

    assert error.value.component == 1


def test_validate_rejects_mean_of_wrong_dimension():
    spec = MixtureSpec.from_components(2, [(1.0, [0.0], np.eye(2))])

    with pytest.raises(DimensionMismatch):
        validate(spec)


def test_from_document_rejects_malformed_documents():
    with pytest.raises(MeasureError):
        MixtureSpec.from_document({"dim": 1, "components": [{"weight": 1.0}]})


def test_closed_form_entropy_of_reference_gaussians():
    shifted = MixtureSpec.gaussian([1.0, 0.0], np.eye(2))
    half = MixtureSpec.gaussian([0.0, 0.0], 0.5)
    shifted_half = MixtureSpec.gaussian([1.0, 0.0], 0.5)

    assert relative_entropy_closed(shifted) == pytest.approx(0.5)
    assert relative_entropy_closed(half) == pytest.approx(0.5 * (math.log(4.0) - 1.0))
    assert relative_entropy_closed(shifted_half) == pytest.approx(0.5 * math.log(4.0))


def test_closed_form_entropy_requires_single_gaussian():
    with pytest.raises(NotSingleGaussian):
        relative_entropy_closed(bimodal_1d())


def test_standard_gaussian_has_exactly_zero_log_density_and_score():
    spec = MixtureSpec.standard(3)
    points = sample(spec, 50, seed=1)

    assert np.all(log_relative_density(spec, points) == 0.0)
    assert np.all(score(spec, points) == 0.0)


def test_score_matches_finite_differences_of_log_rho():
    spec = MixtureSpec.from_components(
        2,
        [
            (0.3, [1.0, -0.5], [[0.6, 0.2], [0.2, 0.9]]),
            (0.7, [-1.0, 0.5], [[1.4, -0.3], [-0.3, 0.8]]),
        ],
    )
    step = 1e-5
    for point in ([0.2, 0.1], [-1.3, 0.7], [2.0, -1.5]):
        x = np.array(point)
        numeric = [
            (log_relative_density(spec, x + step * e) - log_relative_density(spec, x - step * e))
            / (2.0 * step)
            for e in np.eye(2)
        ]
        assert np.allclose(score(spec, x), numeric, atol=1e-6)


def test_single_point_and_batch_evaluations_agree():
    spec = bimodal_1d()
    points = np.array([[0.3], [1.7]])

    batch = log_relative_density(spec, points)

    assert log_relative_density(spec, points[1]) == pytest.approx(batch[1])


def test_mixture_entropy_mc_matches_quadrature():
    spec = bimodal_1d()
    expected = oracles.relative_entropy_1d([(0.5, 2.0, 0.25), (0.5, -2.0, 0.25)])

    estimate = relative_entropy_mc(spec, 20000, seed=5)

    assert abs(estimate.value - expected) <= 3.0 * estimate.std_error


def test_entropy_mc_matches_closed_form_for_single_gaussian():
    spec = MixtureSpec.gaussian([1.0, 0.0], np.eye(2))

    estimate = relative_entropy_mc(spec, 20000, seed=6)

    assert abs(estimate.value - relative_entropy_closed(spec)) <= 3.0 * estimate.std_error


def test_entropy_mc_of_standard_gaussian_is_exactly_zero():
    estimate = relative_entropy_mc(MixtureSpec.standard(2), 500, seed=7)

    assert estimate.value == 0.0
    assert estimate.std_error == 0.0


def test_symmetric_2d_mixture_entropy_matches_tensor_quadrature():
    components = [(0.5, [2.0, 0.0], np.eye(2)), (0.5, [-2.0, 0.0], np.eye(2))]
    spec = MixtureSpec.from_components(2, components)
    expected = oracles.relative_entropy_2d(components)

    estimate = relative_entropy_mc(spec, 20000, seed=8)

    assert abs(estimate.value - expected) <= 3.0 * estimate.std_error


def test_shannon_and_relative_entropy_are_consistent():
    spec = MixtureSpec.from_components(
        2, [(0.3, [1.0, 0.0], [[0.5, 0.1], [0.1, 1.2]]), (0.7, [-0.5, 1.0], np.eye(2))]
    )
    points = sample(spec, 5000, seed=10)

    shannon = shannon_entropy_mc(spec, 5000, seed=10)
    relative = relative_entropy_mc(spec, 5000, seed=10)

    cross = np.mean(0.5 * np.sum(points * points, axis=1)) + math.log(2.0 * math.pi)
    assert shannon.value == pytest.approx(cross - relative.value, rel=1e-10, abs=1e-10)


def test_shannon_entropy_mc_matches_quadrature():
    spec = bimodal_1d()
    expected = oracles.shannon_entropy_1d([(0.5, 2.0, 0.25), (0.5, -2.0, 0.25)])

    estimate = shannon_entropy_mc(spec, 20000, seed=9)

    assert abs(estimate.value - expected) <= 3.0 * estimate.std_error


def test_fisher_information_of_unit_covariance_gaussian_is_mean_norm():
    spec = MixtureSpec.gaussian([1.0, 2.0], np.eye(2))

    estimate = fisher_information_mc(spec, 1000, seed=3)

    assert estimate.value == pytest.approx(5.0)
    assert estimate.std_error == pytest.approx(0.0, abs=1e-12)


def test_fisher_information_of_narrow_gaussian_matches_closed_form():
    variance = 0.5
    spec = MixtureSpec.gaussian([0.0], [[variance]])
    closed = (1.0 / variance - 1.0) ** 2 * variance

    estimate = fisher_information_mc(spec, 20000, seed=4)

    assert oracles.fisher_gaussian_1d(variance) == pytest.approx(closed, rel=1e-6)
    assert abs(estimate.value - closed) <= 3.0 * estimate.std_error


def test_sample_is_deterministic_and_has_target_moments():
    spec = MixtureSpec.gaussian([1.0, -1.0], [[0.5, 0.1], [0.1, 2.0]])

    first = sample(spec, 20000, seed=11)
    second = sample(spec, 20000, seed=11)

    assert np.array_equal(first, second)
    assert np.allclose(first.mean(axis=0), [1.0, -1.0], atol=0.05)
    assert np.allclose(np.cov(first, rowvar=False), [[0.5, 0.1], [0.1, 2.0]], atol=0.1)


def test_gaussian_fit_entropy_recovers_closed_form():
    spec = MixtureSpec.gaussian([0.5, 0.0], [[0.6, 0.0], [0.0, 1.5]])
    points = sample(spec, 20000, seed=21)

    estimate = gaussian_fit_entropy(points, seed=21)

    assert abs(estimate.value - relative_entropy_closed(spec)) <= 3.0 * estimate.std_error
    assert estimate.n_samples == 20000


def test_gaussian_fit_entropy_needs_more_points_than_dimensions():
    with pytest.raises(ValueError):
        gaussian_fit_entropy(np.zeros((2, 2)), seed=0)


def test_combine_mixtures_gives_law_of_linear_combination():
    eta = bimodal_1d()
    xi = MixtureSpec.gaussian([1.0], [[2.0]])

    combined = validate(combine_mixtures(eta, xi, 0.6, 0.8))
    mean, second = mixture_moments(combined)

    assert combined.n_components == 2
    assert mean[0] == pytest.approx(0.8)
    assert second[0] == pytest.approx(0.36 * 4.25 + 0.64 * 2.0 + 0.64)


def test_estimate_from_samples_reports_standard_error():
    estimate = Estimate.from_samples([1.0, 2.0, 3.0, 4.0], seed=-1)

    assert estimate.value == pytest.approx(2.5)
    assert estimate.std_error == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2.0)
    assert estimate.seed == 2**64 - 1
    assert Estimate.from_samples([3.0], seed=0).std_error == 0.0


def test_exact_estimate_has_zero_error():
    assert Estimate.exact(0.25).to_dict() == {
        "value": 0.25,
        "std_error": 0.0,
        "n_samples": 1,
        "seed": 0,
    }
