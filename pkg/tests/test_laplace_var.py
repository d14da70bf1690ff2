import csv
import math

import numpy as np
import pytest

from tests import oracles
from tools.laplace_var import (
    InvalidFunctional,
    OptimizerSettings,
    OverflowRisk,
    PolicyKind,
    PolicyParams,
    TerminalFunctional,
    VariationalError,
    drift_recovery_error,
    duality_gap,
    log_laplace_mc,
    objective_and_gradient,
    objective_estimate,
    optimize_policy,
    write_trace,
)
from tools.measure_core import MixtureSpec
from tools.pathsim import SdeConfig


def test_exact_log_laplace_values():
    assert TerminalFunctional.linear([1.0, 2.0]).exact_log_laplace() == pytest.approx(2.5)
    quadratic = TerminalFunctional.quadratic(0.25 * np.eye(2))
    assert quadratic.exact_log_laplace() == pytest.approx(-math.log(0.75))
    mixture = TerminalFunctional.log_mixture(MixtureSpec.gaussian([1.0], [[0.5]]))
    assert mixture.exact_log_laplace() == 0.0


def test_optimal_constant_drift_is_known_for_linear_and_unit_gaussian_targets():
    shifted = MixtureSpec.gaussian([1.0, -0.5], np.eye(2))
    narrow = MixtureSpec.gaussian([1.0, -0.5], 0.5)

    assert np.array_equal(TerminalFunctional.linear([1.0, 2.0]).optimal_constant_drift(), [1.0, 2.0])
    assert np.array_equal(TerminalFunctional.log_mixture(shifted).optimal_constant_drift(), [1.0, -0.5])
    assert TerminalFunctional.log_mixture(narrow).optimal_constant_drift() is None
    assert TerminalFunctional.quadratic(0.25 * np.eye(2)).optimal_constant_drift() is None


def test_drift_recovery_error_counts_offsets_and_slopes():
    constant = PolicyParams.constant([0.9, 0.1])
    affine = PolicyParams.affine([[[0.0, 0.3], [0.0, 0.0]]], [[1.0, 0.0]])

    assert drift_recovery_error(constant, [1.0, 0.0]) == pytest.approx(0.1)
    assert drift_recovery_error(affine, [1.0, 0.0]) == pytest.approx(0.3)


def test_quadratic_functional_must_stay_integrable():
    with pytest.raises(InvalidFunctional):
        TerminalFunctional.quadratic([[1.0]])
    with pytest.raises(InvalidFunctional):
        TerminalFunctional.quadratic([[0.1, 0.2], [0.0, 0.1]])


def test_log_laplace_of_zero_functional_is_exactly_zero():
    estimate = log_laplace_mc(TerminalFunctional.linear([0.0, 0.0]), 500, seed=1)

    assert estimate.value == 0.0
    assert estimate.std_error == 0.0


def test_log_laplace_matches_quadrature():
    functional = TerminalFunctional.quadratic([[0.25]])
    expected = oracles.log_laplace_1d(lambda z: 0.125 * z * z)

    estimate = log_laplace_mc(functional, 20000, seed=8)

    assert expected == pytest.approx(-0.5 * math.log(0.75), rel=1e-6)
    assert abs(estimate.value - expected) <= 3.0 * estimate.std_error


def test_log_laplace_refuses_overflowing_functionals():
    with pytest.raises(OverflowRisk):
        log_laplace_mc(TerminalFunctional.linear([800.0]), 100, seed=0)


def test_zero_policy_objective_is_mean_of_f():
    functional = TerminalFunctional.linear([1.0, 0.0])
    cfg = SdeConfig(n_steps=16, n_paths=4000, seed=2, dim=2)

    estimate = objective_estimate(functional, PolicyParams.zeros(PolicyKind.CONSTANT, 2), cfg)

    assert abs(estimate.value) <= 3.0 * estimate.std_error


def test_optimal_constant_policy_attains_log_laplace():
    functional = TerminalFunctional.linear([1.0, -0.5])
    cfg = SdeConfig(n_steps=16, n_paths=4000, seed=3, dim=2)

    estimate = objective_estimate(functional, PolicyParams.constant([1.0, -0.5]), cfg)

    assert abs(estimate.value - 0.625) <= 3.0 * estimate.std_error


def test_random_policies_stay_below_log_laplace():
    cfg = SdeConfig(n_steps=16, n_paths=2000, seed=4, dim=2)
    functionals = [
        TerminalFunctional.linear([1.0, 0.5]),
        TerminalFunctional.quadratic(0.25 * np.eye(2)),
        TerminalFunctional.log_mixture(
            MixtureSpec.from_components(
                2, [(0.5, [1.0, 0.0], np.eye(2)), (0.5, [-1.0, 0.0], np.eye(2))]
            )
        ),
    ]
    for index in range(50):
        functional = functionals[index % 3]
        kind = PolicyKind.CONSTANT if index % 2 == 0 else PolicyKind.AFFINE
        policy = PolicyParams.random(kind, 2, bins=2, seed=100 + index)
        gap = duality_gap(functional, policy, cfg.with_seed(1000 + index))
        assert gap.value >= -3.0 * gap.std_error


def test_pathwise_gradient_matches_finite_differences():
    functional = TerminalFunctional.quadratic([[0.3, 0.1], [0.1, 0.2]])
    policy = PolicyParams.random(PolicyKind.AFFINE, 2, bins=2, seed=5, scale=0.5)
    cfg = SdeConfig(n_steps=8, n_paths=200, seed=6, dim=2)

    _, gradient = objective_and_gradient(functional, policy, cfg)

    base = policy.vector()
    step = 1e-6
    numeric = []
    for index in range(base.size):
        shift = np.zeros_like(base)
        shift[index] = step
        up, _ = objective_and_gradient(functional, policy.with_vector(base + shift), cfg)
        down, _ = objective_and_gradient(functional, policy.with_vector(base - shift), cfg)
        numeric.append((up.value - down.value) / (2.0 * step))
    assert np.allclose(gradient, numeric, rtol=1e-5, atol=1e-7)


def test_frozen_noise_objective_matches_simulated_objective():
    functional = TerminalFunctional.linear([0.5, 1.0])
    policy = PolicyParams.random(PolicyKind.AFFINE, 2, bins=3, seed=9)
    cfg = SdeConfig(n_steps=12, n_paths=300, seed=10, dim=2, chunk_size=128)

    frozen, _ = objective_and_gradient(functional, policy, cfg)
    simulated = objective_estimate(functional, policy, cfg)

    assert frozen.value == pytest.approx(simulated.value, rel=1e-12, abs=1e-12)


def test_policy_bins_cover_the_unit_interval():
    policy = PolicyParams.zeros(PolicyKind.AFFINE, 1, bins=4)

    assert [policy.bin_index(t) for t in (0.0, 0.24, 0.25, 0.99, 1.0)] == [0, 0, 1, 3, 3]
    assert policy.n_parameters == 4 * 1 * 1 + 4 * 1


def test_policy_vector_round_trips():
    policy = PolicyParams.random(PolicyKind.AFFINE, 2, bins=2, seed=1)

    rebuilt = policy.with_vector(policy.vector())

    assert np.array_equal(rebuilt.slopes, policy.slopes)
    assert np.array_equal(rebuilt.offsets, policy.offsets)
    with pytest.raises(VariationalError):
        policy.with_vector(np.zeros(3))


def test_affine_policy_shapes_must_agree():
    with pytest.raises(VariationalError):
        PolicyParams.affine(np.zeros((2, 2, 2)), np.zeros((3, 2)))


def test_optimizer_settings_are_validated():
    with pytest.raises(VariationalError):
        OptimizerSettings(iterations=0)
    with pytest.raises(VariationalError):
        OptimizerSettings(step_size=0.0)


def test_optimizer_recovers_optimal_constant_drift():
    functional = TerminalFunctional.linear([1.0, 0.5])
    cfg = SdeConfig(n_steps=16, n_paths=4000, seed=12, dim=2)
    settings = OptimizerSettings(iterations=20, step_size=0.5, batch=200, bins=1)

    result = optimize_policy(functional, PolicyKind.CONSTANT, cfg, settings)

    assert result.status == "Improved"
    assert np.allclose(result.policy.offsets[0], [1.0, 0.5], atol=0.02)
    exact = functional.exact_log_laplace()
    assert abs(result.objective.value - exact) <= 3.0 * result.objective.std_error + 0.02
    assert len(result.trace) == 20


def test_optimizer_recovers_constant_bridge_drift_on_log_mixture():
    functional = TerminalFunctional.log_mixture(MixtureSpec.gaussian([1.0, 0.0], np.eye(2)))
    cfg = SdeConfig(n_steps=32, n_paths=4000, seed=13, dim=2)

    result = optimize_policy(functional, PolicyKind.AFFINE, cfg, OptimizerSettings())

    assert abs(result.objective.value) <= 3.0 * result.objective.std_error + 0.05
    assert np.allclose(result.policy.offsets, [[1.0, 0.0]] * 4, atol=0.05)
    assert np.max(np.abs(result.policy.slopes)) <= 0.05


def test_optimizer_approaches_log_laplace_of_quadratic():
    functional = TerminalFunctional.quadratic([[0.5]])
    cfg = SdeConfig(n_steps=64, n_paths=20000, seed=14, dim=1)
    exact = -0.5 * math.log(0.5)

    result = optimize_policy(functional, PolicyKind.AFFINE, cfg, OptimizerSettings())

    assert functional.exact_log_laplace() == pytest.approx(exact)
    assert result.objective.value > result.initial.value
    assert abs(result.objective.value - exact) <= 0.05 * exact


def test_write_trace(tmp_path):
    functional = TerminalFunctional.linear([1.0])
    cfg = SdeConfig(n_steps=4, n_paths=100, seed=0, dim=1)
    result = optimize_policy(
        functional, PolicyKind.CONSTANT, cfg, OptimizerSettings(iterations=3, batch=20, bins=1)
    )

    write_trace(result, tmp_path / "trace.csv")

    with (tmp_path / "trace.csv").open() as handle:
        rows = list(csv.DictReader(handle))
    assert [int(row["iteration"]) for row in rows] == [0, 1, 2]
