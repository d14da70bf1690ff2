"""Föllmer drifts: closed forms for Gaussian-mixture bridges and Clark-Ocone estimates."""

from __future__ import annotations

import abc
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from tools.measure_core import (
    LOG_2PI,
    Estimate,
    MixtureSpec,
    NotSingleGaussian,
    as_points,
    log_density_gradient,
    log_relative_density,
    mixture_log_density,
    validate,
)
from tools.streams import normalize_seed, stream


logger = logging.getLogger(__name__)

MIN_INNER_SAMPLES = 2


class DriftError(ValueError):
    """Raised when a drift cannot be built or evaluated."""


class TimeOutOfRange(DriftError):
    """A drift was evaluated outside [0, 1)."""


class InnerSampleCountTooSmall(DriftError):
    """A Clark-Ocone drift was asked for fewer than two inner samples."""


class DegenerateProbe(DriftError):
    """A Lipschitz probe was given two identical points."""


class ClassSDensityError(DriftError):
    """A class-S path density is malformed."""


class DriftKind(str, Enum):
    ZERO = "Zero"
    AFFINE_GAUSSIAN = "AffineGaussian"
    MIXTURE_CLOSED_FORM = "MixtureClosedForm"
    CLARK_OCONE_MC = "ClarkOconeMC"
    PARAMETRIC_POLICY = "ParametricPolicy"


@dataclass(frozen=True)
class PathContext:
    """Path history handed to path-dependent drifts.

    ``states[:, j]`` is the state at ``times[j]``; the last column is the
    current state.
    """

    times: np.ndarray
    states: np.ndarray
    path_ids: np.ndarray
    step: int


def check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t < 1.0:
        raise TimeOutOfRange(f"drifts are defined on [0, 1), got t={t}")
    return t


class DriftFunction(abc.ABC):
    """Time-indexed vector field u_t(x) on [0, 1) x R^d."""

    kind: DriftKind
    horizon: float = 1.0
    path_dependent: bool = False

    def __init__(self, dim: int):
        self.dim = int(dim)

    def evaluate(self, t: float, x: Any, context: Optional[PathContext] = None) -> Any:
        t = check_time(t)
        points, single = as_points(x, self.dim)
        values = self._evaluate(t, points, context)
        return values[0] if single else values

    @abc.abstractmethod
    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        """Evaluate on an (n, d) batch."""

    def scaled(self, factor: float) -> DriftFunction:
        return ScaledDrift(self, factor)

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "dim": self.dim, "horizon": self.horizon}


class ZeroDrift(DriftFunction):
    kind = DriftKind.ZERO

    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        return np.zeros_like(points)


class ScaledDrift(DriftFunction):
    """A drift multiplied by a constant; used to corrupt drifts on purpose."""

    def __init__(self, base: DriftFunction, factor: float):
        super().__init__(base.dim)
        self.base = base
        self.factor = float(factor)
        self.kind = base.kind
        self.path_dependent = base.path_dependent

    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        return self.factor * self.base._evaluate(t, points, context)

    def describe(self) -> dict[str, Any]:
        return {**self.base.describe(), "scale": self.factor}


class GaussianBridgeDrift(DriftFunction):
    """u_t(x) = grad log P_{1-t} rho(x) for a Gaussian-mixture target.

    For a component N(m, S) put C_t = t S + (1 - t) I. Completing the square
    in the heat integral gives, up to the mixture weight,

        log P_{1-t} rho_k(x) = -1/2 log det C_t + 1/2 x' C_t^{-1} (S - I) x
                               + m' C_t^{-1} x - t/2 m' C_t^{-1} m

    whose gradient is C_t^{-1} ((S - I) x + m). The components are combined by
    log-sum-exp. Everything is computed in each covariance's eigenbasis, where
    C_t is diagonal.
    """

    def __init__(self, spec: MixtureSpec, kind: DriftKind = DriftKind.MIXTURE_CLOSED_FORM):
        validate(spec)
        super().__init__(spec.dim)
        self.spec = spec
        self.kind = kind
        eigenvalues, eigenvectors = np.linalg.eigh(spec.covs)
        self._eigenvalues = eigenvalues
        self._eigenvectors = eigenvectors
        self._rotated_means = np.einsum("kji,kj->ki", eigenvectors, spec.means)
        self._log_weights = np.log(spec.weights)

    def _terms(self, t: float, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        scales = t * self._eigenvalues + (1.0 - t)
        rotated = np.einsum("kji,nj->nki", self._eigenvectors, points)
        curvature = (self._eigenvalues - 1.0) / scales
        means = self._rotated_means
        terms = (
            self._log_weights[None, :]
            - 0.5 * np.sum(np.log(scales), axis=1)[None, :]
            + 0.5 * np.sum(curvature[None, :, :] * rotated * rotated, axis=2)
            + np.sum((means / scales)[None, :, :] * rotated, axis=2)
            - 0.5 * t * np.sum(means * means / scales, axis=1)[None, :]
        )
        gradients = (
            (self._eigenvalues - 1.0)[None, :, :] * rotated + means[None, :, :]
        ) / scales[None, :, :]
        return terms, np.einsum("kij,nkj->nki", self._eigenvectors, gradients)

    def log_heat(self, t: float, x: Any) -> Any:
        """log P_{1-t} rho(x) in closed form, for t in [0, 1]."""
        points, single = as_points(x, self.dim)
        terms, _ = self._terms(float(t), points)
        values = logsumexp(terms, axis=1)
        return values[0] if single else values

    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        terms, gradients = self._terms(t, points)
        responsibilities = np.exp(terms - logsumexp(terms, axis=1, keepdims=True))
        return np.einsum("nk,nki->ni", responsibilities, gradients)

    def slope(self, t: float) -> np.ndarray:
        """A_t of the affine form u_t(x) = A_t x + b_t (single Gaussians only)."""
        self._require_affine()
        scales = t * self._eigenvalues[0] + (1.0 - t)
        vectors = self._eigenvectors[0]
        return vectors @ np.diag((self._eigenvalues[0] - 1.0) / scales) @ vectors.T

    def offset(self, t: float) -> np.ndarray:
        self._require_affine()
        scales = t * self._eigenvalues[0] + (1.0 - t)
        return self._eigenvectors[0] @ (self._rotated_means[0] / scales)

    def _require_affine(self) -> None:
        if self.spec.n_components != 1:
            raise NotSingleGaussian("the drift is affine only for a single Gaussian")

    def describe(self) -> dict[str, Any]:
        return {**super().describe(), "target": self.spec.to_document()}


def mixture_drift_closed(spec: MixtureSpec) -> GaussianBridgeDrift:
    """Closed-form Föllmer drift of the bridge with terminal law ``spec``."""
    return GaussianBridgeDrift(spec, DriftKind.MIXTURE_CLOSED_FORM)


def affine_gaussian_drift(spec: MixtureSpec) -> GaussianBridgeDrift:
    """Föllmer drift of a single Gaussian, affine in x."""
    if spec.n_components != 1:
        raise NotSingleGaussian(f"affine drift needs one component, got {spec.n_components}")
    return GaussianBridgeDrift(spec, DriftKind.AFFINE_GAUSSIAN)


def heat_apply_mc(spec: MixtureSpec, s: float, x: Any, n: int, seed: int) -> Estimate:
    """Monte-Carlo P_s rho(x) = E rho(x + W_s)."""
    if s < 0.0:
        raise ValueError(f"heat time must be nonnegative, got {s}")
    point = np.asarray(x, dtype=float).reshape(-1)
    if s == 0.0:
        value = float(np.exp(log_relative_density(spec, point)))
        return Estimate(value=value, std_error=0.0, n_samples=n, seed=normalize_seed(seed))
    noise = stream(seed).standard_normal((n, spec.dim))
    values = np.exp(log_relative_density(spec, point[None, :] + math.sqrt(s) * noise))
    return Estimate.from_samples(values, seed)


def log_heat_closed(spec: MixtureSpec, s: float, x: Any) -> Any:
    """log P_s rho(x) in closed form for s in [0, 1]."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"closed-form heat time must lie in [0, 1], got {s}")
    return GaussianBridgeDrift(spec).log_heat(1.0 - s, x)


@dataclass(frozen=True, eq=False)
class ClassSDensity:
    """Path density Phi(w_{t_1}, ..., w_{t_n}) = eps + q / g.

    ``q`` is a Gaussian mixture on the stacked marginals and ``g`` the Wiener
    density of the same marginals, so Phi >= eps holds by construction.
    Marginals at t = 0 are constant (every path starts at 0) and are dropped.
    """

    dim: int
    times: tuple[float, ...]
    phi: MixtureSpec
    lower_bound: float

    @classmethod
    def build(
        cls,
        dim: int,
        times: Sequence[float],
        phi: MixtureSpec,
        lower_bound: float,
    ) -> ClassSDensity:
        raw_times = [float(value) for value in times]
        if not raw_times:
            raise ClassSDensityError("a class-S density needs at least one time")
        if any(later <= earlier for earlier, later in zip(raw_times, raw_times[1:])):
            raise ClassSDensityError(f"times must be strictly increasing, got {raw_times}")
        if raw_times[0] < 0.0 or raw_times[-1] > 1.0:
            raise ClassSDensityError(f"times must lie in [0, 1], got {raw_times}")
        if raw_times[0] == 0.0:
            logger.warning("Ignoring the t=0 marginal of a class-S density; it is constant")
            raw_times = raw_times[1:]
        if not raw_times:
            raise ClassSDensityError("a class-S density needs a positive time")
        if not lower_bound > 0.0:
            raise ClassSDensityError(f"lower bound must be positive, got {lower_bound}")
        validate(phi)
        if phi.dim != len(raw_times) * dim:
            raise ClassSDensityError(
                f"phi has dimension {phi.dim}, expected {len(raw_times)} x {dim}"
            )
        return cls(dim=int(dim), times=tuple(raw_times), phi=phi, lower_bound=float(lower_bound))

    @property
    def n_times(self) -> int:
        return len(self.times)

    def _wiener(self) -> tuple[np.ndarray, float]:
        times = np.array(self.times)
        covariance = np.minimum.outer(times, times)
        _, log_det = np.linalg.slogdet(covariance)
        return np.linalg.inv(covariance), float(log_det)

    def log_ratio_and_gradient(self, stacked: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """log(q/g) and its gradient for stacked marginals of shape (m, n_times, d)."""
        precision, log_det = self._wiener()
        count = stacked.shape[0]
        flat = stacked.reshape(count, -1)
        mixed = np.einsum("ij,mjd->mid", precision, stacked)
        log_g = (
            -0.5 * np.sum(stacked * mixed, axis=(1, 2))
            - 0.5 * flat.shape[1] * LOG_2PI
            - 0.5 * self.dim * log_det
        )
        log_q = mixture_log_density(self.phi, flat)
        grad_q = log_density_gradient(self.phi, flat).reshape(stacked.shape)
        return log_q - log_g, grad_q + mixed

    def value(self, stacked: Any) -> np.ndarray:
        marginals = np.asarray(stacked, dtype=float).reshape(-1, self.n_times, self.dim)
        log_ratio, _ = self.log_ratio_and_gradient(marginals)
        return self.lower_bound + np.exp(log_ratio)


class ClarkOconeDrift(DriftFunction):
    """u_t = E[D_t Phi | G_t] / E[Phi | G_t] estimated with fresh future increments.

    Past marginals are read from the path (linear interpolation between grid
    nodes), future ones are drawn from the current state. Numerator and
    denominator share the same inner draws.
    """

    kind = DriftKind.CLARK_OCONE_MC
    path_dependent = True

    def __init__(self, density: ClassSDensity, n_inner: int, seed: int):
        if n_inner < MIN_INNER_SAMPLES:
            raise InnerSampleCountTooSmall(
                f"n_inner must be at least {MIN_INNER_SAMPLES}, got {n_inner}"
            )
        super().__init__(density.dim)
        self.density = density
        self.n_inner = int(n_inner)
        self.seed = normalize_seed(seed)

    @staticmethod
    def _time_index(t: float, context: Optional[PathContext]) -> int:
        if context is not None:
            return int(context.step)
        return int(round(t * 2**40))

    def _past_value(self, time: float, context: PathContext, row: int) -> np.ndarray:
        grid = np.asarray(context.times, dtype=float)
        states = context.states[row]
        return np.array([np.interp(time, grid, states[:, axis]) for axis in range(self.dim)])

    def _ratio_terms(
        self, t: float, point: np.ndarray, context: Optional[PathContext], row: int
    ) -> tuple[np.ndarray, np.ndarray, float]:
        times = np.array(self.density.times)
        future = times > t
        past = times < t
        if np.any(past) and context is None:
            raise DriftError("a path history is required once t passes a marginal time")

        path_id = int(context.path_ids[row]) if context is not None else row
        rng = stream(self.seed, self._time_index(t, context), path_id)
        noise = rng.standard_normal((self.n_inner, int(np.sum(future)), self.dim))

        stacked = np.empty((self.n_inner, times.size, self.dim))
        for index, time in enumerate(times):
            if past[index]:
                stacked[:, index, :] = self._past_value(time, context, row)
            elif not future[index]:
                stacked[:, index, :] = point
        if np.any(future):
            gaps = np.diff(np.concatenate([[t], times[future]]))
            increments = noise * np.sqrt(gaps)[None, :, None]
            stacked[:, future, :] = point[None, None, :] + np.cumsum(increments, axis=1)

        log_ratio, gradient = self.density.log_ratio_and_gradient(stacked)
        active = (times >= t).astype(float)
        directional = np.einsum("mid,i->md", gradient, active)
        return log_ratio, directional, math.log(self.density.lower_bound)

    def _estimate(
        self, t: float, point: np.ndarray, context: Optional[PathContext], row: int
    ) -> tuple[np.ndarray, np.ndarray]:
        log_ratio, directional, log_floor = self._ratio_terms(t, point, context, row)
        shift = max(float(np.max(log_ratio)), log_floor)
        scaled = np.exp(log_ratio - shift)
        numerator = scaled[:, None] * directional
        denominator = math.exp(log_floor - shift) + scaled
        ratio = numerator.mean(axis=0) / denominator.mean()
        residuals = numerator - ratio[None, :] * denominator[:, None]
        std_error = residuals.std(axis=0, ddof=1) / (math.sqrt(self.n_inner) * denominator.mean())
        return ratio, std_error

    def _evaluate(self, t: float, points: np.ndarray, context: Optional[PathContext]) -> np.ndarray:
        return np.stack(
            [self._estimate(t, point, context, row)[0] for row, point in enumerate(points)]
        )

    def evaluate_with_error(
        self, t: float, x: Any, context: Optional[PathContext] = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Drift and delta-method standard error of the ratio estimator."""
        t = check_time(t)
        points, single = as_points(x, self.dim)
        pairs = [self._estimate(t, point, context, row) for row, point in enumerate(points)]
        values = np.stack([pair[0] for pair in pairs])
        errors = np.stack([pair[1] for pair in pairs])
        if single:
            return values[0], errors[0]
        return values, errors

    def describe(self) -> dict[str, Any]:
        return {
            **super().describe(),
            "times": list(self.density.times),
            "mc_inner_samples": self.n_inner,
            "inner_seed": self.seed,
        }


def clark_ocone_drift_mc(density: ClassSDensity, n_inner: int, seed_rule: int) -> ClarkOconeDrift:
    """Monte-Carlo Clark-Ocone drift; inner streams keyed by (seed, step, path)."""
    return ClarkOconeDrift(density, n_inner, seed_rule)


def drift_lipschitz_probe(drift: DriftFunction, t: float, x: Any, y: Any) -> float:
    """|u_t(x) - u_t(y)| / |x - y|."""
    check_time(t)
    first = np.asarray(x, dtype=float).reshape(-1)
    second = np.asarray(y, dtype=float).reshape(-1)
    distance = float(np.linalg.norm(first - second))
    if distance == 0.0:
        raise DegenerateProbe("probe points coincide")
    difference = drift.evaluate(t, first) - drift.evaluate(t, second)
    return float(np.linalg.norm(difference) / distance)
