"""Gaussian-mixture target measures and their divergence functionals.

A target ``nu`` is stored through its Lebesgue-density parameters. The
relative density ``rho = d nu / d gamma_d`` with respect to the standard
Gaussian is always derived from them, never stored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterable, Optional, Sequence

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from tools.streams import normalize_seed, stream


logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
WEIGHT_SUM_TOLERANCE = 1e-12
MIN_COV_EIGENVALUE = 1e-10
SYMMETRY_TOLERANCE = 1e-12


class MeasureError(ValueError):
    """Raised when a mixture target is malformed or unsupported."""

    def __init__(self, message: str, component: Optional[int] = None):
        self.component = component
        if component is not None:
            message = f"component {component}: {message}"
        super().__init__(message)


class NonPositiveWeight(MeasureError):
    """A mixture weight is zero, negative or not finite."""


class WeightsNotNormalized(MeasureError):
    """Mixture weights do not sum to one."""


class CovNotPD(MeasureError):
    """A covariance is not symmetric positive definite."""


class DimensionMismatch(MeasureError):
    """A mean, covariance or point does not match the declared dimension."""


class NotSingleGaussian(MeasureError):
    """A closed form that needs exactly one component was given a mixture."""


@dataclass(frozen=True, eq=False)
class Component:
    weight: float
    mean: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Finite Gaussian mixture on R^d given by weights, means and covariances."""

    dim: int
    components: tuple[Component, ...]

    @classmethod
    def from_components(
        cls,
        dim: int,
        components: Iterable[tuple[float, Sequence[float], Sequence[Sequence[float]]]],
    ) -> MixtureSpec:
        built = tuple(
            Component(
                weight=float(weight),
                mean=np.array(mean, dtype=float).reshape(-1),
                cov=np.atleast_2d(np.array(cov, dtype=float)),
            )
            for weight, mean, cov in components
        )
        return cls(dim=int(dim), components=built)

    @classmethod
    def gaussian(cls, mean: Sequence[float], cov: Any) -> MixtureSpec:
        """Single Gaussian N(mean, cov); a scalar cov means cov * I."""
        mean_array = np.array(mean, dtype=float).reshape(-1)
        dim = mean_array.size
        cov_array = np.array(cov, dtype=float)
        if cov_array.ndim == 0:
            cov_array = float(cov_array) * np.eye(dim)
        return cls.from_components(dim, [(1.0, mean_array, cov_array)])

    @classmethod
    def standard(cls, dim: int) -> MixtureSpec:
        return cls.gaussian(np.zeros(dim), np.eye(dim))

    @classmethod
    def from_document(cls, document: dict[str, Any]) -> MixtureSpec:
        """Build a spec from ``{dim, components: [{weight, mean, cov}]}``."""
        try:
            dim = int(document["dim"])
            raw_components = document["components"]
            return cls.from_components(
                dim,
                [(item["weight"], item["mean"], item["cov"]) for item in raw_components],
            )
        except (KeyError, TypeError, ValueError) as error:
            raise MeasureError(f"malformed mixture document: {error}") from error

    def to_document(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "components": [
                {
                    "weight": component.weight,
                    "mean": component.mean.tolist(),
                    "cov": component.cov.tolist(),
                }
                for component in self.components
            ],
        }

    @property
    def n_components(self) -> int:
        return len(self.components)

    @cached_property
    def weights(self) -> np.ndarray:
        return np.array([component.weight for component in self.components])

    @cached_property
    def means(self) -> np.ndarray:
        return np.stack([component.mean for component in self.components])

    @cached_property
    def covs(self) -> np.ndarray:
        return np.stack([component.cov for component in self.components])

    @cached_property
    def is_standard(self) -> bool:
        """True when the target is exactly gamma_d, so rho is identically one."""
        if self.n_components != 1:
            return False
        component = self.components[0]
        return bool(
            np.all(component.mean == 0.0) and np.array_equal(component.cov, np.eye(self.dim))
        )

    @cached_property
    def _factors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        lower = np.stack([cholesky(cov, lower=True) for cov in self.covs])
        inverse_lower = np.stack(
            [solve_triangular(factor, np.eye(self.dim), lower=True) for factor in lower]
        )
        half_log_det = np.array([np.sum(np.log(np.diag(factor))) for factor in lower])
        return lower, inverse_lower, half_log_det


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo statistic with its standard error and seed provenance."""

    value: float
    std_error: float
    n_samples: int
    seed: int

    @classmethod
    def from_samples(cls, samples: Any, seed: int) -> Estimate:
        values = np.asarray(samples, dtype=float).reshape(-1)
        if values.size == 0:
            raise ValueError("an estimate needs at least one sample")
        std_error = 0.0
        if values.size > 1:
            std_error = float(np.std(values, ddof=1) / math.sqrt(values.size))
        return cls(
            value=float(np.mean(values)),
            std_error=std_error,
            n_samples=int(values.size),
            seed=normalize_seed(seed),
        )

    @classmethod
    def exact(cls, value: float) -> Estimate:
        return cls(value=float(value), std_error=0.0, n_samples=1, seed=0)

    def to_dict(self) -> dict[str, Any]:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
        }


def validate(spec: MixtureSpec) -> MixtureSpec:
    """Return ``spec`` unchanged when every mixture invariant holds."""
    if spec.dim < 1:
        raise DimensionMismatch(f"dim must be at least 1, got {spec.dim}")
    if not spec.components:
        raise MeasureError("a mixture needs at least one component")

    for index, component in enumerate(spec.components):
        if not math.isfinite(component.weight) or component.weight <= 0.0:
            raise NonPositiveWeight(f"weight {component.weight} is not positive", index)
        if component.mean.shape != (spec.dim,):
            raise DimensionMismatch(
                f"mean has shape {component.mean.shape}, expected ({spec.dim},)", index
            )
        if component.cov.shape != (spec.dim, spec.dim):
            raise DimensionMismatch(
                f"cov has shape {component.cov.shape}, expected ({spec.dim}, {spec.dim})", index
            )
        if not np.all(np.isfinite(component.mean)) or not np.all(np.isfinite(component.cov)):
            raise MeasureError("mean and cov must be finite", index)
        scale = max(1.0, float(np.max(np.abs(component.cov))))
        if np.max(np.abs(component.cov - component.cov.T)) > SYMMETRY_TOLERANCE * scale:
            raise CovNotPD("cov is not symmetric", index)
        smallest = float(np.linalg.eigvalsh(component.cov)[0])
        if smallest <= MIN_COV_EIGENVALUE:
            raise CovNotPD(f"smallest eigenvalue {smallest:.3e} is not above {MIN_COV_EIGENVALUE}", index)

    total = float(np.sum(spec.weights))
    if abs(total - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise WeightsNotNormalized(f"weights sum to {total!r}, expected 1")
    return spec


def as_points(x: Any, dim: int) -> tuple[np.ndarray, bool]:
    """Return ``x`` as an (n, dim) array and whether it was a single point."""
    points = np.asarray(x, dtype=float)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    if points.ndim != 2 or points.shape[1] != dim:
        raise DimensionMismatch(f"points have shape {np.shape(x)}, expected (n, {dim}) or ({dim},)")
    return points, single


def _unwrap(values: np.ndarray, single: bool) -> Any:
    return values[0] if single else values


def standard_log_density(points: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(points * points, axis=1) - 0.5 * points.shape[1] * LOG_2PI


def component_log_densities(spec: MixtureSpec, points: np.ndarray) -> np.ndarray:
    """Per-component Gaussian log densities, shape (n, K)."""
    _, inverse_lower, half_log_det = spec._factors
    diffs = points[:, None, :] - spec.means[None, :, :]
    whitened = np.einsum("kij,nkj->nki", inverse_lower, diffs)
    return (
        -0.5 * np.sum(whitened * whitened, axis=2)
        - half_log_det[None, :]
        - 0.5 * spec.dim * LOG_2PI
    )


def mixture_log_density(spec: MixtureSpec, x: Any) -> Any:
    """Log of the mixture Lebesgue density at ``x``."""
    points, single = as_points(x, spec.dim)
    weighted = component_log_densities(spec, points) + np.log(spec.weights)[None, :]
    return _unwrap(logsumexp(weighted, axis=1), single)


def log_relative_density(spec: MixtureSpec, x: Any) -> Any:
    """log rho(x) = log p(x) - log gamma_d(x)."""
    points, single = as_points(x, spec.dim)
    if spec.is_standard:
        return _unwrap(np.zeros(points.shape[0]), single)
    weighted = component_log_densities(spec, points) + np.log(spec.weights)[None, :]
    values = logsumexp(weighted, axis=1) - standard_log_density(points)
    return _unwrap(values, single)


def log_density_gradient(spec: MixtureSpec, points: np.ndarray) -> np.ndarray:
    """Gradient of the mixture log density for an (n, d) batch."""
    _, inverse_lower, _ = spec._factors
    weighted = component_log_densities(spec, points) + np.log(spec.weights)[None, :]
    responsibilities = np.exp(weighted - logsumexp(weighted, axis=1, keepdims=True))
    diffs = spec.means[None, :, :] - points[:, None, :]
    whitened = np.einsum("kij,nkj->nki", inverse_lower, diffs)
    pulls = np.einsum("kji,nkj->nki", inverse_lower, whitened)
    return np.einsum("nk,nki->ni", responsibilities, pulls)


def score(spec: MixtureSpec, x: Any) -> Any:
    """Gradient of log rho, i.e. grad log p(x) + x."""
    points, single = as_points(x, spec.dim)
    if spec.is_standard:
        return _unwrap(np.zeros_like(points), single)
    return _unwrap(log_density_gradient(spec, points) + points, single)


def sample(spec: MixtureSpec, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. points from the mixture; deterministic in (seed, n)."""
    if n < 1:
        raise ValueError("n must be positive")
    rng = stream(seed)
    labels = rng.choice(spec.n_components, size=n, p=spec.weights / np.sum(spec.weights))
    noise = rng.standard_normal((n, spec.dim))
    lower, _, _ = spec._factors
    return spec.means[labels] + np.einsum("nij,nj->ni", lower[labels], noise)


def relative_entropy_closed(spec: MixtureSpec) -> float:
    """ent(nu | gamma_d) for a single Gaussian N(m, S)."""
    if spec.n_components != 1:
        raise NotSingleGaussian(
            f"closed-form entropy needs one component, got {spec.n_components}"
        )
    component = spec.components[0]
    _, log_det = np.linalg.slogdet(component.cov)
    mean = component.mean
    return float(0.5 * (np.trace(component.cov) + mean @ mean - spec.dim - log_det))


def relative_entropy_mc(spec: MixtureSpec, n: int, seed: int) -> Estimate:
    points = sample(spec, n, seed)
    return Estimate.from_samples(log_relative_density(spec, points), seed)


def fisher_information_mc(spec: MixtureSpec, n: int, seed: int) -> Estimate:
    """E_nu |grad log rho|^2."""
    points = sample(spec, n, seed)
    gradients = score(spec, points)
    return Estimate.from_samples(np.sum(gradients * gradients, axis=1), seed)


def shannon_entropy_mc(spec: MixtureSpec, n: int, seed: int) -> Estimate:
    points = sample(spec, n, seed)
    return Estimate.from_samples(-mixture_log_density(spec, points), seed)


def mixture_moments(spec: MixtureSpec) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and coordinatewise second moments of the mixture."""
    weights = spec.weights
    mean = weights @ spec.means
    diagonals = np.diagonal(spec.covs, axis1=1, axis2=2)
    second = weights @ (diagonals + spec.means**2)
    return mean, second


def combine_mixtures(eta: MixtureSpec, xi: MixtureSpec, a: float, b: float) -> MixtureSpec:
    """Law of a * eta + b * xi for independent mixtures eta and xi."""
    if eta.dim != xi.dim:
        raise DimensionMismatch(f"cannot combine dimensions {eta.dim} and {xi.dim}")
    components = [
        (
            left.weight * right.weight,
            a * left.mean + b * right.mean,
            a * a * left.cov + b * b * right.cov,
        )
        for left in eta.components
        for right in xi.components
    ]
    return MixtureSpec.from_components(eta.dim, components)


def gaussian_relative_entropy(mean: np.ndarray, cov: np.ndarray) -> float:
    """ent(N(mean, cov) | gamma_d) from moment parameters."""
    _, log_det = np.linalg.slogdet(cov)
    return float(0.5 * (np.trace(cov) + mean @ mean - mean.size - log_det))


def gaussian_fit_entropy(points: Any, seed: int) -> Estimate:
    """Relative entropy of the moment-fitted Gaussian, delta-method standard error."""
    sample_points = np.atleast_2d(np.asarray(points, dtype=float))
    count, dim = sample_points.shape
    if count <= dim:
        raise ValueError(f"need more than {dim} points to fit a {dim}-dimensional Gaussian")
    mean = sample_points.mean(axis=0)
    cov = np.atleast_2d(np.cov(sample_points, rowvar=False))
    value = gaussian_relative_entropy(mean, cov)

    precision = np.linalg.inv(cov)
    curvature = 0.5 * (np.eye(dim) - precision)
    linear = precision @ mean
    influence = np.einsum("ni,ij,nj->n", sample_points, curvature, sample_points) + sample_points @ linear
    std_error = float(np.std(influence, ddof=1) / math.sqrt(count))
    return Estimate(value=value, std_error=std_error, n_samples=count, seed=normalize_seed(seed))
