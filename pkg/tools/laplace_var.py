"""Variational log-Laplace bounds: E[f(B + U) - 1/2 |U|^2] over parametric drift policies."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from tools.follmer import DriftKind, DriftFunction, PathContext
from tools.measure_core import (
    Estimate,
    MixtureSpec,
    log_relative_density,
    score,
    validate,
)
from tools.pathsim import (
    SdeConfig,
    brownian_endpoints,
    brownian_increments,
    map_path_chunks,
    simulate,
)
from tools.streams import derive_seed, normalize_seed, stream


logger = logging.getLogger(__name__)

QUADRATIC_MARGIN = 1e-3
OVERFLOW_THRESHOLD = 700.0
LAPLACE_SEED_LABEL = 11
EVALUATION_SEED_LABEL = 13
TRAINING_SEED_LABEL = 17


class VariationalError(ValueError):
    """Raised when a functional, policy or optimizer run is invalid."""


class InvalidFunctional(VariationalError):
    """A terminal functional violates its integrability or shape constraints."""


class OverflowRisk(VariationalError):
    """exp(f) would overflow for at least one sample."""


class NonFiniteGradient(VariationalError):
    """The pathwise gradient is not finite."""


class FunctionalKind(str, Enum):
    LINEAR = "Linear"
    QUADRATIC = "Quadratic"
    LOG_MIXTURE = "LogMixture"


class PolicyKind(str, Enum):
    CONSTANT = "ConstantDrift"
    AFFINE = "AffineDrift"


@dataclass(frozen=True, eq=False)
class TerminalFunctional:
    """f(x) = a.x, 1/2 x'Qx or log rho(x) for a Gaussian mixture."""

    kind: FunctionalKind
    dim: int
    vector: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None
    spec: Optional[MixtureSpec] = None

    @classmethod
    def linear(cls, a: Sequence[float]) -> TerminalFunctional:
        vector = np.asarray(a, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vector)):
            raise InvalidFunctional("linear coefficients must be finite")
        return cls(kind=FunctionalKind.LINEAR, dim=vector.size, vector=vector)

    @classmethod
    def quadratic(cls, q: Any) -> TerminalFunctional:
        matrix = np.atleast_2d(np.asarray(q, dtype=float))
        if matrix.shape[0] != matrix.shape[1]:
            raise InvalidFunctional(f"Q must be square, got shape {matrix.shape}")
        if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12):
            raise InvalidFunctional("Q must be symmetric")
        largest = float(np.linalg.eigvalsh(matrix)[-1])
        if largest >= 1.0 - QUADRATIC_MARGIN:
            raise InvalidFunctional(
                f"largest eigenvalue of Q is {largest}; it must stay below {1.0 - QUADRATIC_MARGIN}"
            )
        return cls(kind=FunctionalKind.QUADRATIC, dim=matrix.shape[0], matrix=matrix)

    @classmethod
    def log_mixture(cls, spec: MixtureSpec) -> TerminalFunctional:
        validate(spec)
        return cls(kind=FunctionalKind.LOG_MIXTURE, dim=spec.dim, spec=spec)

    def value(self, points: np.ndarray) -> np.ndarray:
        if self.kind is FunctionalKind.LINEAR:
            return points @ self.vector
        if self.kind is FunctionalKind.QUADRATIC:
            return 0.5 * np.einsum("ni,ij,nj->n", points, self.matrix, points)
        return np.asarray(log_relative_density(self.spec, points))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        if self.kind is FunctionalKind.LINEAR:
            return np.broadcast_to(self.vector, points.shape).copy()
        if self.kind is FunctionalKind.QUADRATIC:
            return points @ self.matrix
        return np.asarray(score(self.spec, points))

    def exact_log_laplace(self) -> Optional[float]:
        """log int e^f d gamma_d when it has a closed form."""
        if self.kind is FunctionalKind.LINEAR:
            return float(0.5 * self.vector @ self.vector)
        if self.kind is FunctionalKind.QUADRATIC:
            _, log_det = np.linalg.slogdet(np.eye(self.dim) - self.matrix)
            return float(-0.5 * log_det)
        return 0.0

    def optimal_constant_drift(self) -> Optional[np.ndarray]:
        """The maximizing drift when it is constant in time and space, else None.

        Linear f is maximized by u = a; log rho of N(m, I) by u = m.
        """
        if self.kind is FunctionalKind.LINEAR:
            return self.vector.copy()
        if self.kind is FunctionalKind.LOG_MIXTURE and self.spec.n_components == 1:
            component = self.spec.components[0]
            if np.array_equal(component.cov, np.eye(self.dim)):
                return np.asarray(component.mean, dtype=float).copy()
        return None

    def to_document(self) -> dict[str, Any]:
        document: dict[str, Any] = {"kind": self.kind.value, "dim": self.dim}
        if self.vector is not None:
            document["a"] = self.vector.tolist()
        if self.matrix is not None:
            document["q"] = self.matrix.tolist()
        if self.spec is not None:
            document["target"] = self.spec.to_document()
        return document


@dataclass(frozen=True, eq=False)
class PolicyParams:
    """u(t, x) = A_k x + b_k on the time bin k = floor(t * bins).

    A constant policy has one bin and its slope is pinned at zero.
    """

    kind: PolicyKind
    slopes: np.ndarray
    offsets: np.ndarray

    @classmethod
    def constant(cls, c: Sequence[float]) -> PolicyParams:
        offsets = np.asarray(c, dtype=float).reshape(1, -1)
        dim = offsets.shape[1]
        return cls(PolicyKind.CONSTANT, np.zeros((1, dim, dim)), offsets)

    @classmethod
    def affine(cls, slopes: Any, offsets: Any) -> PolicyParams:
        slope_array = np.asarray(slopes, dtype=float)
        offset_array = np.asarray(offsets, dtype=float)
        if slope_array.ndim != 3 or offset_array.ndim != 2:
            raise VariationalError("affine policies need slopes (bins, d, d) and offsets (bins, d)")
        if slope_array.shape[0] != offset_array.shape[0] or slope_array.shape[1:] != (
            offset_array.shape[1],
            offset_array.shape[1],
        ):
            raise VariationalError(
                f"slopes {slope_array.shape} and offsets {offset_array.shape} do not agree"
            )
        return cls(PolicyKind.AFFINE, slope_array, offset_array)

    @classmethod
    def zeros(cls, kind: PolicyKind, dim: int, bins: int = 1) -> PolicyParams:
        if kind is PolicyKind.CONSTANT:
            return cls.constant(np.zeros(dim))
        if bins < 1:
            raise VariationalError(f"bins must be positive, got {bins}")
        return cls.affine(np.zeros((bins, dim, dim)), np.zeros((bins, dim)))

    @classmethod
    def random(cls, kind: PolicyKind, dim: int, bins: int, seed: int, scale: float = 1.0) -> PolicyParams:
        rng = stream(seed)
        if kind is PolicyKind.CONSTANT:
            return cls.constant(scale * rng.standard_normal(dim))
        return cls.affine(
            0.5 * scale * rng.standard_normal((bins, dim, dim)),
            scale * rng.standard_normal((bins, dim)),
        )

    @property
    def dim(self) -> int:
        return int(self.offsets.shape[1])

    @property
    def bins(self) -> int:
        return int(self.offsets.shape[0])

    @property
    def n_parameters(self) -> int:
        return self.vector().size

    def bin_index(self, t: float) -> int:
        return min(int(math.floor(t * self.bins)), self.bins - 1)

    def vector(self) -> np.ndarray:
        if self.kind is PolicyKind.CONSTANT:
            return self.offsets.reshape(-1).copy()
        return np.concatenate([self.slopes.reshape(-1), self.offsets.reshape(-1)])

    def with_vector(self, values: np.ndarray) -> PolicyParams:
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != self.n_parameters:
            raise VariationalError(f"expected {self.n_parameters} parameters, got {values.size}")
        if self.kind is PolicyKind.CONSTANT:
            return replace(self, offsets=values.reshape(self.offsets.shape))
        split = self.slopes.size
        return replace(
            self,
            slopes=values[:split].reshape(self.slopes.shape),
            offsets=values[split:].reshape(self.offsets.shape),
        )

    def to_document(self) -> dict[str, Any]:
        if self.kind is PolicyKind.CONSTANT:
            return {"kind": self.kind.value, "c": self.offsets[0].tolist()}
        return {
            "kind": self.kind.value,
            "bins": self.bins,
            "slopes": self.slopes.tolist(),
            "offsets": self.offsets.tolist(),
        }


class ParametricPolicy(DriftFunction):
    kind = DriftKind.PARAMETRIC_POLICY

    def __init__(self, params: PolicyParams):
        super().__init__(params.dim)
        self.params = params

    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        index = self.params.bin_index(t)
        return points @ self.params.slopes[index].T + self.params.offsets[index]

    def describe(self) -> dict[str, Any]:
        return {**super().describe(), "policy": self.params.to_document()}


def _check_dims(f: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig) -> None:
    if not f.dim == policy.dim == cfg.dim:
        raise VariationalError(
            f"dimensions disagree: functional {f.dim}, policy {policy.dim}, config {cfg.dim}"
        )


def objective_estimate(f: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig) -> Estimate:
    """Monte-Carlo E[f(X_1) - 1/2 int |u|^2] for X = B + U under ``policy``."""
    _check_dims(f, policy, cfg)
    batch = simulate(ParametricPolicy(policy), cfg)
    return Estimate.from_samples(f.value(batch.terminal_points) - batch.energy, cfg.seed)


def _objective_gradient_chunk(
    f: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig, path_ids: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    increments = brownian_increments(cfg, path_ids)
    count, steps, dim = increments.shape
    dt = cfg.dt
    times = np.arange(steps + 1) / steps
    bins = np.array([policy.bin_index(times[step]) for step in range(steps)])

    states = np.zeros((count, steps + 1, dim))
    velocities = np.zeros((count, steps, dim))
    energy = np.zeros(count)
    for step in range(steps):
        slope = policy.slopes[bins[step]]
        velocity = states[:, step, :] @ slope.T + policy.offsets[bins[step]]
        velocities[:, step, :] = velocity
        energy += 0.5 * np.sum(velocity * velocity, axis=1) * dt
        states[:, step + 1, :] = states[:, step, :] + velocity * dt + increments[:, step, :]

    terminal = states[:, -1, :]
    samples = f.value(terminal) - energy

    # Adjoint sweep: costate = d(objective)/d(state), h = d(objective)/d(u_k).
    costate = f.gradient(terminal)
    slope_grad = np.zeros_like(policy.slopes)
    offset_grad = np.zeros_like(policy.offsets)
    for step in range(steps - 1, -1, -1):
        index = bins[step]
        pull = (costate - velocities[:, step, :]) * dt
        offset_grad[index] += pull.sum(axis=0)
        slope_grad[index] += np.einsum("ni,nj->ij", pull, states[:, step, :])
        costate = costate + pull @ policy.slopes[index]
    return samples, slope_grad, offset_grad


def objective_and_gradient(
    f: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig
) -> tuple[Estimate, np.ndarray]:
    """Frozen-noise objective and its pathwise gradient in ``policy.vector()`` layout.

    Paths use the same streams and Euler update as ``simulate``, so the value
    equals ``objective_estimate`` on the same config.
    """
    _check_dims(f, policy, cfg)
    parts = map_path_chunks(cfg, lambda ids: _objective_gradient_chunk(f, policy, cfg, ids))
    samples = np.concatenate([part[0] for part in parts])
    slope_grad = np.sum([part[1] for part in parts], axis=0) / cfg.n_paths
    offset_grad = np.sum([part[2] for part in parts], axis=0) / cfg.n_paths
    if policy.kind is PolicyKind.CONSTANT:
        gradient = offset_grad.reshape(-1)
    else:
        gradient = np.concatenate([slope_grad.reshape(-1), offset_grad.reshape(-1)])
    return Estimate.from_samples(samples, cfg.seed), gradient


def log_laplace_mc(f: TerminalFunctional, n: int, seed: int) -> Estimate:
    """log of the Monte-Carlo mean of e^{f(Z)}, Z ~ gamma_d, with a delta-method SE."""
    points = brownian_endpoints(SdeConfig(n_steps=2, n_paths=n, seed=seed, dim=f.dim))
    values = f.value(points)
    worst = float(np.max(values))
    if worst > OVERFLOW_THRESHOLD:
        raise OverflowRisk(f"f reaches {worst:.1f} on a standard Gaussian sample")
    weights = np.exp(values - worst)
    mean_weight = float(np.mean(weights))
    std_error = 0.0
    if n > 1:
        std_error = float(np.std(weights, ddof=1) / (math.sqrt(n) * mean_weight))
    return Estimate(
        value=worst + math.log(mean_weight),
        std_error=std_error,
        n_samples=int(n),
        seed=normalize_seed(seed),
    )


def laplace_reference(f: TerminalFunctional, cfg: SdeConfig) -> Estimate:
    """log-Laplace estimate on a seed independent of the path batch of ``cfg``."""
    return log_laplace_mc(f, cfg.n_paths, derive_seed(cfg.seed, LAPLACE_SEED_LABEL))


def gap_between(laplace: Estimate, objective: Estimate) -> Estimate:
    return Estimate(
        value=laplace.value - objective.value,
        std_error=math.hypot(laplace.std_error, objective.std_error),
        n_samples=objective.n_samples,
        seed=objective.seed,
    )


def duality_gap(f: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig) -> Estimate:
    """log-Laplace estimate minus the policy objective; nonnegative up to noise."""
    return gap_between(laplace_reference(f, cfg), objective_estimate(f, policy, cfg))


def drift_recovery_error(policy: PolicyParams, target: Sequence[float]) -> float:
    """Largest coordinate gap between a policy and the constant drift ``target``.

    Slopes are compared against zero.
    """
    offsets_gap = float(np.max(np.abs(policy.offsets - np.asarray(target, dtype=float)[None, :])))
    return max(offsets_gap, float(np.max(np.abs(policy.slopes))))


@dataclass(frozen=True)
class OptimizerSettings:
    iterations: int = 100
    step_size: float = 0.2
    batch: int = 1000
    bins: int = 4

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.batch < 2 or self.bins < 1:
            raise VariationalError("iterations, batch and bins must be positive (batch at least 2)")
        if not self.step_size > 0.0:
            raise VariationalError(f"step_size must be positive, got {self.step_size}")


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    policy: PolicyParams
    objective: Estimate
    initial: Estimate
    status: str
    trace: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "policy": self.policy.to_document(),
            "objective": self.objective.to_dict(),
            "initial": self.initial.to_dict(),
            "status": self.status,
            "trace": self.trace,
        }


def optimize_policy(
    f: TerminalFunctional,
    kind: PolicyKind,
    cfg: SdeConfig,
    opt: Optional[OptimizerSettings] = None,
) -> OptimizationResult:
    """Stochastic gradient ascent on the objective with common random numbers per iteration.

    Gradients of affine policies are rescaled by the number of bins, i.e. taken
    with respect to the drift per unit time. The returned policy averages the
    iterates of the second half of the run and is re-evaluated, together with
    the zero policy, on a fresh seed.
    """
    opt = opt or OptimizerSettings()
    policy = PolicyParams.zeros(kind, f.dim, opt.bins)
    _check_dims(f, policy, cfg)
    scale = float(policy.bins)
    params = policy.vector()
    tail_sum = np.zeros_like(params)
    tail_count = 0
    tail_start = opt.iterations // 2
    trace: list[dict[str, Any]] = []

    for iteration in range(opt.iterations):
        batch_cfg = cfg.with_paths(opt.batch).with_seed(
            derive_seed(cfg.seed, TRAINING_SEED_LABEL, iteration)
        )
        estimate, gradient = objective_and_gradient(f, policy.with_vector(params), batch_cfg)
        if not np.all(np.isfinite(gradient)):
            raise NonFiniteGradient(f"gradient is not finite at iteration {iteration}")
        trace.append(
            {"iteration": iteration, "objective": estimate.value, "std_error": estimate.std_error}
        )
        logger.debug("Iteration %s objective %.6f", iteration, estimate.value)
        params = params + opt.step_size * scale * gradient
        if iteration >= tail_start:
            tail_sum += params
            tail_count += 1

    final_policy = policy.with_vector(tail_sum / tail_count)
    evaluation_cfg = cfg.with_seed(derive_seed(cfg.seed, EVALUATION_SEED_LABEL))
    initial = objective_estimate(f, policy, evaluation_cfg)
    final = objective_estimate(f, final_policy, evaluation_cfg)
    status = "Improved"
    if final.value <= initial.value + final.std_error:
        status = "NoImprovement"
        logger.warning(
            "Optimizer did not improve: %.6f after vs %.6f before", final.value, initial.value
        )
    return OptimizationResult(
        policy=final_policy, objective=final, initial=initial, status=status, trace=trace
    )


def write_trace(result: OptimizationResult, path: Any) -> None:
    """Write the optimizer trace as CSV (iteration, objective, std_error)."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["iteration", "objective", "std_error"])
        writer.writeheader()
        writer.writerows(result.trace)
