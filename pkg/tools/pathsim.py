"""Brownian paths, Euler-Maruyama for X = B + U, drift energy and Girsanov weights."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from tools.follmer import DriftError, DriftFunction, PathContext, ZeroDrift
from tools.measure_core import Estimate
from tools.streams import normalize_seed, standard_normals


logger = logging.getLogger(__name__)

DEFAULT_STEPS = 512
DEFAULT_PATHS = 20_000
DEFAULT_CHUNK_SIZE = 4096
MIN_STEPS = 2


class SimulationError(RuntimeError):
    """Raised when a path simulation cannot be completed."""


class NonFiniteState(SimulationError):
    """A path coordinate became non-finite; the batch is aborted."""

    def __init__(self, path_index: int, step: int):
        self.path_index = path_index
        self.step = step
        super().__init__(f"non-finite state on path {path_index} at step {step}")


class DriftEvaluationFailure(SimulationError):
    """The drift raised while a batch was being simulated."""


class InvalidSdeConfig(SimulationError):
    """The SDE configuration violates its invariants."""


@dataclass(frozen=True)
class SdeConfig:
    """Uniform grid t_k = k / n_steps on [0, 1] and a batch of paths."""

    n_steps: int
    n_paths: int
    seed: int
    dim: int
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self) -> None:
        if self.n_steps < MIN_STEPS:
            raise InvalidSdeConfig(f"n_steps must be at least {MIN_STEPS}, got {self.n_steps}")
        if self.n_paths < 1:
            raise InvalidSdeConfig(f"n_paths must be positive, got {self.n_paths}")
        if self.dim < 1:
            raise InvalidSdeConfig(f"dim must be positive, got {self.dim}")
        if self.chunk_size < 1 or self.workers < 1:
            raise InvalidSdeConfig("chunk_size and workers must be positive")

    @property
    def dt(self) -> float:
        return 1.0 / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def with_dim(self, dim: int) -> SdeConfig:
        return SdeConfig(self.n_steps, self.n_paths, self.seed, dim, self.workers, self.chunk_size)

    def with_seed(self, seed: int) -> SdeConfig:
        return SdeConfig(self.n_steps, self.n_paths, seed, self.dim, self.workers, self.chunk_size)

    def with_paths(self, n_paths: int) -> SdeConfig:
        return SdeConfig(self.n_steps, n_paths, self.seed, self.dim, self.workers, self.chunk_size)

    def with_steps(self, n_steps: int) -> SdeConfig:
        return SdeConfig(n_steps, self.n_paths, self.seed, self.dim, self.workers, self.chunk_size)

    def to_dict(self) -> dict[str, Any]:
        return {"n_steps": self.n_steps, "n_paths": self.n_paths, "seed": self.seed, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated paths with per-path energy and Girsanov log-weights."""

    terminal_points: np.ndarray
    brownian_endpoints: np.ndarray
    energy: np.ndarray
    girsanov_logweight: np.ndarray
    drift_means: np.ndarray
    drift_std_errors: np.ndarray
    times: np.ndarray
    seed: int
    n_steps: int
    states: Optional[np.ndarray] = None
    drifts: Optional[np.ndarray] = None

    @property
    def n_paths(self) -> int:
        return int(self.terminal_points.shape[0])

    @property
    def dim(self) -> int:
        return int(self.terminal_points.shape[1])

    def energy_estimate(self) -> Estimate:
        return Estimate.from_samples(self.energy, self.seed)


def brownian_increments(cfg: SdeConfig, path_ids: Sequence[int]) -> np.ndarray:
    """Increments of shape (len(path_ids), n_steps, d); one stream per path."""
    noise = standard_normals(cfg.seed, path_ids, (cfg.n_steps, cfg.dim))
    return noise * math.sqrt(cfg.dt)


def coarsen_increments(increments: np.ndarray, factor: int) -> np.ndarray:
    """Sum consecutive groups of ``factor`` increments: same paths, coarser grid."""
    if factor == 1:
        return increments
    count, steps, dim = increments.shape
    if steps % factor:
        raise InvalidSdeConfig(f"{steps} steps cannot be coarsened by {factor}")
    return increments.reshape(count, steps // factor, factor, dim).sum(axis=2)


def _running_endpoint(increments: np.ndarray) -> np.ndarray:
    # Same summation order as the state update in _simulate_chunk.
    endpoint = np.zeros((increments.shape[0], increments.shape[2]))
    for step in range(increments.shape[1]):
        endpoint = endpoint + increments[:, step, :]
    return endpoint


def _chunks(cfg: SdeConfig) -> list[np.ndarray]:
    ids = np.arange(cfg.n_paths)
    return [ids[start : start + cfg.chunk_size] for start in range(0, cfg.n_paths, cfg.chunk_size)]


def map_path_chunks(cfg: SdeConfig, work: Callable[[np.ndarray], Any]) -> list[Any]:
    chunks = _chunks(cfg)
    if cfg.workers == 1 or len(chunks) == 1:
        return [work(chunk) for chunk in chunks]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(work, chunks))


def _evaluate_drift(
    drift: DriftFunction, t: float, x: np.ndarray, context: Optional[PathContext]
) -> np.ndarray:
    try:
        values = drift.evaluate(t, x, context)
    except DriftError as error:
        raise DriftEvaluationFailure(f"drift failed at t={t}: {error}") from error
    return np.asarray(values, dtype=float).reshape(x.shape)


def _check_finite(state: np.ndarray, path_ids: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(state)):
        bad_row = int(np.nonzero(~np.all(np.isfinite(state), axis=1))[0][0])
        raise NonFiniteState(int(path_ids[bad_row]), step)


def _simulate_chunk(
    drift: DriftFunction,
    cfg: SdeConfig,
    path_ids: np.ndarray,
    coarsen: int,
    record: bool,
) -> dict[str, np.ndarray]:
    increments = coarsen_increments(brownian_increments(cfg, path_ids), coarsen)
    count, steps, dim = increments.shape
    dt = 1.0 / steps
    times = np.arange(steps + 1) / steps

    state = np.zeros((count, dim))
    energy = np.zeros(count)
    stochastic = np.zeros(count)
    drift_means = np.zeros((steps, dim))
    drift_spread = np.zeros((steps, dim))
    history = np.zeros((count, steps + 1, dim)) if (record or drift.path_dependent) else None
    drifts = np.zeros((count, steps, dim)) if record else None

    for step in range(steps):
        context = None
        if drift.path_dependent:
            context = PathContext(
                times=times[: step + 1],
                states=history[:, : step + 1, :],
                path_ids=path_ids,
                step=step,
            )
        velocity = _evaluate_drift(drift, times[step], state, context)
        energy += 0.5 * np.sum(velocity * velocity, axis=1) * dt
        stochastic += np.sum(velocity * increments[:, step, :], axis=1)
        drift_means[step] = velocity.mean(axis=0)
        drift_spread[step] = np.sum((velocity - drift_means[step]) ** 2, axis=0)
        state = state + velocity * dt + increments[:, step, :]
        _check_finite(state, path_ids, step)
        if history is not None:
            history[:, step + 1, :] = state
        if drifts is not None:
            drifts[:, step, :] = velocity

    return {
        "terminal": state,
        "brownian": _running_endpoint(increments),
        "energy": energy,
        "logweight": -stochastic - energy,
        "count": count,
        "drift_means": drift_means,
        "drift_spread": drift_spread,
        "states": history if record else None,
        "drifts": drifts,
    }


def _merge_drift_moments(parts: list[dict[str, Any]]) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise merge of per-chunk drift means and squared-deviation sums, in chunk order."""
    count = parts[0]["count"]
    means = parts[0]["drift_means"]
    spread = parts[0]["drift_spread"]
    for part in parts[1:]:
        other = part["count"]
        total = count + other
        delta = part["drift_means"] - means
        means = means + delta * (other / total)
        spread = spread + part["drift_spread"] + delta**2 * (count * other / total)
        count = total
    return means, spread


def simulate(
    drift: DriftFunction,
    cfg: SdeConfig,
    *,
    coarsen: int = 1,
    record_paths: bool = False,
) -> PathBatch:
    """Euler-Maruyama for X_t = B_t + int_0^t u_s(X_s) ds with left-endpoint drifts.

    Each path owns a random stream keyed by its index and chunks have a fixed
    size, so the batch is bit-identical for any worker count. ``coarsen``
    reruns the same Brownian paths on a grid ``coarsen`` times coarser.
    """
    if drift.horizon != 1.0:
        raise InvalidSdeConfig(f"drift horizon must be 1, got {drift.horizon}")
    if drift.dim != cfg.dim:
        raise InvalidSdeConfig(f"drift dimension {drift.dim} does not match config {cfg.dim}")
    logger.debug(
        "Simulating %s paths x %s steps (drift=%s, seed=%s, coarsen=%s)",
        cfg.n_paths,
        cfg.n_steps,
        drift.kind.value,
        cfg.seed,
        coarsen,
    )
    parts = map_path_chunks(
        cfg, lambda ids: _simulate_chunk(drift, cfg, ids, coarsen, record_paths)
    )
    steps = cfg.n_steps // coarsen
    count = cfg.n_paths
    drift_means, drift_spread = _merge_drift_moments(parts)
    if count > 1:
        drift_std_errors = np.sqrt(drift_spread / (count - 1) / count)
    else:
        drift_std_errors = np.zeros_like(drift_means)

    return PathBatch(
        terminal_points=np.concatenate([part["terminal"] for part in parts]),
        brownian_endpoints=np.concatenate([part["brownian"] for part in parts]),
        energy=np.concatenate([part["energy"] for part in parts]),
        girsanov_logweight=np.concatenate([part["logweight"] for part in parts]),
        drift_means=drift_means,
        drift_std_errors=drift_std_errors,
        times=np.arange(steps + 1) / steps,
        seed=normalize_seed(cfg.seed),
        n_steps=steps,
        states=np.concatenate([part["states"] for part in parts]) if record_paths else None,
        drifts=np.concatenate([part["drifts"] for part in parts]) if record_paths else None,
    )


def girsanov_reweight(batch: PathBatch, g: Callable[[np.ndarray], Any]) -> Estimate:
    """Estimate E[g(B_1)] under Wiener measure from a drifted batch."""
    values = np.asarray(g(batch.terminal_points), dtype=float).reshape(-1)
    if values.size == 1 and batch.n_paths > 1:
        values = np.full(batch.n_paths, float(values[0]))
    return Estimate.from_samples(np.exp(batch.girsanov_logweight) * values, batch.seed)


def brownian_endpoints(cfg: SdeConfig) -> np.ndarray:
    """Endpoints B_1 of driftless paths, identical to simulate(Zero, cfg)."""
    parts = map_path_chunks(cfg, lambda ids: _running_endpoint(brownian_increments(cfg, ids)))
    return np.concatenate(parts)


def zero_batch(cfg: SdeConfig) -> PathBatch:
    return simulate(ZeroDrift(cfg.dim), cfg)


@dataclass(frozen=True, eq=False)
class CoupledBatch:
    """Several drifted processes driven by linear images of one Brownian motion."""

    terminals: list[np.ndarray]
    combined_terminal: np.ndarray
    energies: list[np.ndarray]
    combined_energy: np.ndarray
    chain_margin_min: np.ndarray
    seed: int
    n_steps: int
    extras: dict[str, Any] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return int(self.combined_terminal.shape[0])


def _simulate_coupled_chunk(
    drifts: Sequence[DriftFunction],
    noise_maps: Sequence[np.ndarray],
    mix_maps: Sequence[np.ndarray],
    chain_weights: np.ndarray,
    cfg: SdeConfig,
    path_ids: np.ndarray,
) -> dict[str, Any]:
    ambient = brownian_increments(cfg, path_ids)
    count = ambient.shape[0]
    dt = cfg.dt
    out_dim = mix_maps[0].shape[0]
    states = [np.zeros((count, drift.dim)) for drift in drifts]
    energies = [np.zeros(count) for _ in drifts]
    combined_energy = np.zeros(count)
    chain_min = np.full(count, np.inf)

    for step in range(cfg.n_steps):
        t = step * dt
        combined_velocity = np.zeros((count, out_dim))
        weighted_square = np.zeros(count)
        velocities = []
        for index, drift in enumerate(drifts):
            velocity = _evaluate_drift(drift, t, states[index], None)
            velocities.append(velocity)
            square = np.sum(velocity * velocity, axis=1)
            energies[index] += 0.5 * square * dt
            weighted_square += chain_weights[index] * square
            combined_velocity += np.einsum("ij,nj->ni", mix_maps[index], velocity)
        combined_square = np.sum(combined_velocity * combined_velocity, axis=1)
        combined_energy += 0.5 * combined_square * dt
        chain_min = np.minimum(chain_min, weighted_square - combined_square)
        for index, velocity in enumerate(velocities):
            noise = np.einsum("ij,nj->ni", noise_maps[index], ambient[:, step, :])
            states[index] = states[index] + velocity * dt + noise
            _check_finite(states[index], path_ids, step)

    combined = sum(np.einsum("ij,nj->ni", mix_maps[index], states[index]) for index in range(len(drifts)))
    return {
        "terminals": states,
        "combined": combined,
        "energies": energies,
        "combined_energy": combined_energy,
        "chain_min": chain_min,
    }


def simulate_coupled(
    drifts: Sequence[DriftFunction],
    noise_maps: Sequence[Any],
    mix_maps: Sequence[Any],
    cfg: SdeConfig,
    chain_weights: Optional[Sequence[float]] = None,
) -> CoupledBatch:
    """Run X_i = M_i B + U_i for every i on one ambient Brownian motion B.

    ``noise_maps[i]`` (k_i x D) maps the ambient noise into process i,
    ``mix_maps[i]`` (d_out x k_i) combines terminal points and drifts. The
    chain margin is sum_i w_i |u_i|^2 - |sum_i L_i u_i|^2 per step, minimized
    over steps for each path.
    """
    if not drifts or len(drifts) != len(noise_maps) or len(drifts) != len(mix_maps):
        raise InvalidSdeConfig("drifts, noise_maps and mix_maps must be non-empty and aligned")
    noise_arrays = [np.atleast_2d(np.asarray(matrix, dtype=float)) for matrix in noise_maps]
    mix_arrays = [np.atleast_2d(np.asarray(matrix, dtype=float)) for matrix in mix_maps]
    for drift, noise, mix in zip(drifts, noise_arrays, mix_arrays):
        if noise.shape != (drift.dim, cfg.dim) or mix.shape[1] != drift.dim:
            raise InvalidSdeConfig(
                f"maps {noise.shape} / {mix.shape} do not fit drift dimension {drift.dim}"
            )
    weights = np.zeros(len(drifts)) if chain_weights is None else np.asarray(chain_weights, float)

    parts = map_path_chunks(
        cfg,
        lambda ids: _simulate_coupled_chunk(drifts, noise_arrays, mix_arrays, weights, cfg, ids),
    )
    return CoupledBatch(
        terminals=[
            np.concatenate([part["terminals"][index] for part in parts])
            for index in range(len(drifts))
        ],
        combined_terminal=np.concatenate([part["combined"] for part in parts]),
        energies=[
            np.concatenate([part["energies"][index] for part in parts])
            for index in range(len(drifts))
        ],
        combined_energy=np.concatenate([part["combined_energy"] for part in parts]),
        chain_margin_min=np.concatenate([part["chain_min"] for part in parts]),
        seed=normalize_seed(cfg.seed),
        n_steps=cfg.n_steps,
    )


def write_path_dump(batch: PathBatch, path: str | Path) -> Path:
    """Write (path_id, step, t, x_1..x_d, u_1..u_d) rows for a recorded batch."""
    if batch.states is None or batch.drifts is None:
        raise SimulationError("the batch was simulated without record_paths=True")
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    dim = batch.dim
    header = ["path_id", "step", "t"]
    header += [f"x_{axis + 1}" for axis in range(dim)]
    header += [f"u_{axis + 1}" for axis in range(dim)]
    with target.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for path_id in range(batch.n_paths):
            for step in range(batch.n_steps + 1):
                drift_values = (
                    batch.drifts[path_id, step].tolist() if step < batch.n_steps else [""] * dim
                )
                writer.writerow(
                    [path_id, step, repr(float(batch.times[step]))]
                    + [repr(float(value)) for value in batch.states[path_id, step]]
                    + [repr(value) if value != "" else "" for value in drift_values]
                )
    logger.info("Wrote path dump for %s paths to %s", batch.n_paths, target)
    return target
