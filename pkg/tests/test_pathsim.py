import csv

import numpy as np
import pytest

from tools.follmer import (
    DriftError,
    DriftFunction,
    DriftKind,
    affine_gaussian_drift,
    mixture_drift_closed,
)
from tools.measure_core import MixtureSpec
from tools.pathsim import (
    DriftEvaluationFailure,
    InvalidSdeConfig,
    NonFiniteState,
    SdeConfig,
    SimulationError,
    brownian_endpoints,
    coarsen_increments,
    girsanov_reweight,
    simulate,
    simulate_coupled,
    write_path_dump,
    zero_batch,
)


class ExplodingDrift(DriftFunction):
    kind = DriftKind.ZERO

    def _evaluate(self, t, points, context):
        return np.full_like(points, np.inf) if t > 0.2 else np.zeros_like(points)


class FailingDrift(DriftFunction):
    kind = DriftKind.ZERO

    def _evaluate(self, t, points, context):
        raise DriftError("no value here")


def shifted_drift():
    return affine_gaussian_drift(MixtureSpec.gaussian([1.0, 0.0], np.eye(2)))


def test_sde_config_validates_its_fields():
    with pytest.raises(InvalidSdeConfig):
        SdeConfig(n_steps=1, n_paths=10, seed=0, dim=1)
    with pytest.raises(InvalidSdeConfig):
        SdeConfig(n_steps=4, n_paths=0, seed=0, dim=1)
    with pytest.raises(InvalidSdeConfig):
        SdeConfig(n_steps=4, n_paths=10, seed=0, dim=1, workers=0)


def test_zero_drift_gives_exactly_zero_energy_and_weights():
    cfg = SdeConfig(n_steps=32, n_paths=300, seed=4, dim=2)

    batch = zero_batch(cfg)

    assert np.all(batch.energy == 0.0)
    assert np.all(batch.girsanov_logweight == 0.0)
    assert np.array_equal(batch.terminal_points, batch.brownian_endpoints)


def test_brownian_endpoints_match_zero_drift_terminals():
    cfg = SdeConfig(n_steps=16, n_paths=200, seed=8, dim=3, chunk_size=64)

    assert np.array_equal(brownian_endpoints(cfg), zero_batch(cfg).terminal_points)


def test_brownian_endpoints_are_bit_identical_on_fine_grids():
    for dim in (1, 3):
        cfg = SdeConfig(n_steps=512, n_paths=400, seed=2, dim=dim, chunk_size=128)

        batch = zero_batch(cfg)

        assert np.array_equal(brownian_endpoints(cfg), batch.terminal_points)
        assert np.array_equal(batch.brownian_endpoints, batch.terminal_points)


def test_batch_is_identical_for_any_worker_count():
    base = SdeConfig(n_steps=16, n_paths=300, seed=12, dim=2, chunk_size=64)
    threaded = SdeConfig(n_steps=16, n_paths=300, seed=12, dim=2, workers=4, chunk_size=64)

    first = simulate(shifted_drift(), base)
    second = simulate(shifted_drift(), threaded)

    assert np.array_equal(first.terminal_points, second.terminal_points)
    assert np.array_equal(first.energy, second.energy)
    assert np.array_equal(first.drift_means, second.drift_means)
    assert np.array_equal(first.drift_std_errors, second.drift_std_errors)


def test_constant_drift_energy_is_half_its_squared_norm():
    cfg = SdeConfig(n_steps=64, n_paths=100, seed=1, dim=2)

    batch = simulate(shifted_drift(), cfg)

    assert np.allclose(batch.energy, 0.5)
    assert np.allclose(batch.terminal_points - batch.brownian_endpoints, [1.0, 0.0])


def test_girsanov_reweighting_recovers_wiener_moments():
    cfg = SdeConfig(n_steps=32, n_paths=20000, seed=2024, dim=2)
    batch = simulate(shifted_drift(), cfg)

    for g, expected in (
        (lambda x: x[:, 0], 0.0),
        (lambda x: x[:, 0] ** 2, 1.0),
        (lambda x: np.ones(x.shape[0]), 1.0),
    ):
        estimate = girsanov_reweight(batch, g)
        assert abs(estimate.value - expected) <= 3.0 * estimate.std_error


def test_terminal_law_of_gaussian_bridge():
    spec = MixtureSpec.gaussian([1.0, -0.5], [[0.6, 0.2], [0.2, 1.4]])
    cfg = SdeConfig(n_steps=128, n_paths=8000, seed=5, dim=2)

    batch = simulate(affine_gaussian_drift(spec), cfg)

    points = batch.terminal_points
    assert np.allclose(points.mean(axis=0), [1.0, -0.5], atol=0.06)
    assert np.allclose(np.cov(points, rowvar=False), [[0.6, 0.2], [0.2, 1.4]], atol=0.1)


def test_coarsening_reuses_the_same_paths():
    cfg = SdeConfig(n_steps=16, n_paths=50, seed=3, dim=1)

    fine = zero_batch(cfg)
    coarse = simulate(mixture_drift_closed(MixtureSpec.standard(1)), cfg, coarsen=2)

    assert coarse.n_steps == 8
    assert np.allclose(coarse.brownian_endpoints, fine.brownian_endpoints)


def test_coarsen_increments_rejects_uneven_factor():
    with pytest.raises(InvalidSdeConfig):
        coarsen_increments(np.zeros((2, 5, 1)), 2)


def test_non_finite_state_aborts_batch():
    cfg = SdeConfig(n_steps=8, n_paths=10, seed=0, dim=1)

    with pytest.raises(NonFiniteState) as error:
        simulate(ExplodingDrift(1), cfg)

    assert error.value.path_index == 0


def test_drift_errors_are_wrapped():
    cfg = SdeConfig(n_steps=8, n_paths=10, seed=0, dim=1)

    with pytest.raises(DriftEvaluationFailure):
        simulate(FailingDrift(1), cfg)


def test_drift_dimension_must_match_config():
    with pytest.raises(InvalidSdeConfig):
        simulate(shifted_drift(), SdeConfig(n_steps=8, n_paths=10, seed=0, dim=3))


def test_coupled_processes_share_the_ambient_noise():
    cfg = SdeConfig(n_steps=16, n_paths=100, seed=6, dim=2)
    standard = MixtureSpec.standard(1)
    drifts = [affine_gaussian_drift(standard), affine_gaussian_drift(standard)]

    batch = simulate_coupled(
        drifts,
        noise_maps=[[[1.0, 0.0]], [[0.0, 1.0]]],
        mix_maps=[[[1.0], [0.0]], [[0.0], [1.0]]],
        cfg=cfg,
        chain_weights=[1.0, 1.0],
    )

    assert np.allclose(batch.combined_terminal, brownian_endpoints(cfg))
    assert np.all(batch.combined_energy == 0.0)
    assert np.all(batch.chain_margin_min == 0.0)


def test_coupled_maps_must_fit_drifts():
    cfg = SdeConfig(n_steps=8, n_paths=10, seed=0, dim=2)
    drift = affine_gaussian_drift(MixtureSpec.standard(1))

    with pytest.raises(InvalidSdeConfig):
        simulate_coupled([drift], noise_maps=[np.eye(2)], mix_maps=[np.eye(2)], cfg=cfg)


def test_path_dump_writes_every_node(tmp_path):
    cfg = SdeConfig(n_steps=4, n_paths=3, seed=0, dim=2)
    batch = simulate(shifted_drift(), cfg, record_paths=True)

    target = write_path_dump(batch, tmp_path / "dump" / "paths.csv")

    with target.open() as handle:
        rows = list(csv.reader(handle))
    assert rows[0] == ["path_id", "step", "t", "x_1", "x_2", "u_1", "u_2"]
    assert len(rows) == 1 + 3 * 5
    assert rows[5][-2:] == ["", ""]
    assert float(rows[1][5]) == pytest.approx(1.0)


def test_path_dump_needs_recorded_paths(tmp_path):
    batch = simulate(shifted_drift(), SdeConfig(n_steps=4, n_paths=3, seed=0, dim=2))

    with pytest.raises(SimulationError):
        write_path_dump(batch, tmp_path / "paths.csv")
