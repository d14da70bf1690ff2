"""Frames and the entropy inequality suite.

Every check returns an ``InequalityReport`` whose margin is signed so that a
positive margin means the inequality holds. Monte-Carlo sides carry their
standard errors; exact sides carry zero error and fall back to a rounding
floor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np

from tools.follmer import DriftFunction, affine_gaussian_drift, mixture_drift_closed
from tools.measure_core import (
    DimensionMismatch,
    Estimate,
    MixtureSpec,
    NotSingleGaussian,
    combine_mixtures,
    fisher_information_mc,
    gaussian_fit_entropy,
    gaussian_relative_entropy,
    mixture_moments,
    relative_entropy_closed,
    relative_entropy_mc,
    shannon_entropy_mc,
    validate,
)
from tools.pathsim import SdeConfig, simulate, simulate_coupled
from tools.streams import derive_seed, normalize_seed, stream


logger = logging.getLogger(__name__)

FRAME_TOLERANCE = 1e-10
PROJECTION_TOLERANCE = 1e-12
ROUNDING_FLOOR = 1e-12
SE_MULTIPLIER = 3.0
PARSEVAL_PROBES = 100


class FrameError(ValueError):
    """Raised when a frame or a frame-indexed input is malformed."""


class FrameConditionViolated(FrameError):
    """sum_i c_i P_i is not the identity."""


class NotAProjection(FrameError):
    """A basis does not have orthonormal columns."""


class NonIntegrableFactor(FrameError):
    """A Gaussian-form factor is not integrable against the standard Gaussian."""


class Verdict(str, Enum):
    HOLDS_WITH_MARGIN = "HoldsWithMargin"
    WITHIN_NOISE = "WithinNoise"
    VIOLATION_FLAGGED = "ViolationFlagged"


@dataclass(frozen=True)
class InequalityReport:
    name: str
    relation: str
    lhs: Estimate
    rhs: Estimate
    margin: float
    tolerance: float
    verdict: Verdict
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return self.verdict is Verdict.VIOLATION_FLAGGED

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "relation": self.relation,
            "lhs": self.lhs.to_dict(),
            "rhs": self.rhs.to_dict(),
            "margin": self.margin,
            "tolerance": self.tolerance,
            "verdict": self.verdict.value,
            "details": self.details,
        }


def _tolerance(lhs: Estimate, rhs: Estimate, extra: float) -> float:
    combined = math.hypot(lhs.std_error, rhs.std_error)
    floor = ROUNDING_FLOOR * max([1.0] + [abs(v) for v in (lhs.value, rhs.value) if math.isfinite(v)])
    return max(SE_MULTIPLIER * combined + abs(extra), floor)


def compare(
    name: str,
    lhs: Estimate,
    rhs: Estimate,
    relation: str,
    *,
    extra_tolerance: float = 0.0,
    details: Optional[dict[str, Any]] = None,
) -> InequalityReport:
    """Verdict on ``lhs <= rhs`` or ``lhs >= rhs`` against 3 combined SE."""
    if relation == "<=":
        margin = rhs.value - lhs.value
    elif relation == ">=":
        margin = lhs.value - rhs.value
    else:
        raise ValueError(f"unknown relation {relation!r}")
    tolerance = _tolerance(lhs, rhs, extra_tolerance)
    if margin > tolerance:
        verdict = Verdict.HOLDS_WITH_MARGIN
    elif margin >= -tolerance:
        verdict = Verdict.WITHIN_NOISE
    else:
        verdict = Verdict.VIOLATION_FLAGGED
    return InequalityReport(name, relation, lhs, rhs, margin, tolerance, verdict, details or {})


def equality_check(
    name: str,
    lhs: Estimate,
    rhs: Estimate,
    *,
    extra_tolerance: float = 0.0,
    details: Optional[dict[str, Any]] = None,
) -> InequalityReport:
    """WithinNoise when |lhs - rhs| is inside the tolerance, ViolationFlagged otherwise."""
    tolerance = _tolerance(lhs, rhs, extra_tolerance)
    margin = lhs.value - rhs.value
    verdict = Verdict.WITHIN_NOISE if abs(margin) <= tolerance else Verdict.VIOLATION_FLAGGED
    return InequalityReport(name, "==", lhs, rhs, margin, tolerance, verdict, details or {})


def scale_estimate(estimate: Estimate, factor: float) -> Estimate:
    return Estimate(
        value=factor * estimate.value,
        std_error=abs(factor) * estimate.std_error,
        n_samples=estimate.n_samples,
        seed=estimate.seed,
    )


def weighted_sum(estimates: Sequence[Estimate], weights: Sequence[float]) -> Estimate:
    """sum_i w_i E_i for independent estimates."""
    value = float(sum(weight * item.value for weight, item in zip(weights, estimates)))
    variance = sum((weight * item.std_error) ** 2 for weight, item in zip(weights, estimates))
    return Estimate(
        value=value,
        std_error=math.sqrt(variance),
        n_samples=max(item.n_samples for item in estimates),
        seed=estimates[0].seed,
    )


@dataclass(frozen=True, eq=False)
class FrameItem:
    weight: float
    basis: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    @property
    def projection(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True, eq=False)
class FrameSpec:
    """Weights c_i and orthonormal bases of subspaces E_i with sum_i c_i P_i = I."""

    ambient_dim: int
    items: tuple[FrameItem, ...]

    @classmethod
    def build(cls, ambient_dim: int, items: Sequence[tuple[float, Any]]) -> FrameSpec:
        built = []
        for index, (weight, basis) in enumerate(items):
            array = np.asarray(basis, dtype=float)
            if array.ndim == 1:
                array = array.reshape(-1, 1)
            if array.shape[0] != ambient_dim:
                raise DimensionMismatch(
                    f"basis {index} has {array.shape[0]} rows, expected {ambient_dim}"
                )
            if not weight > 0.0:
                raise FrameError(f"weight {index} must be positive, got {weight}")
            built.append(FrameItem(weight=float(weight), basis=array))
        if not built:
            raise FrameError("a frame needs at least one subspace")
        return cls(ambient_dim=int(ambient_dim), items=tuple(built))

    @classmethod
    def from_document(cls, document: dict[str, Any]) -> FrameSpec:
        return cls.build(
            int(document["ambient_dim"]),
            [(item["c"], item["basis"]) for item in document["items"]],
        )

    def to_document(self) -> dict[str, Any]:
        return {
            "ambient_dim": self.ambient_dim,
            "items": [{"c": item.weight, "basis": item.basis.tolist()} for item in self.items],
        }

    @property
    def weights(self) -> np.ndarray:
        return np.array([item.weight for item in self.items])

    def __len__(self) -> int:
        return len(self.items)


def coordinate_frame(dim: int) -> FrameSpec:
    """The coordinate axes with unit weights."""
    identity = np.eye(dim)
    return FrameSpec.build(dim, [(1.0, identity[:, [axis]]) for axis in range(dim)])


def harmonic_frame(count: int) -> FrameSpec:
    """``count`` equiangular unit vectors in the plane with weights 2 / count."""
    if count < 3:
        raise FrameError("a harmonic frame needs at least three vectors")
    angles = math.pi / 2.0 + 2.0 * math.pi * np.arange(count) / count
    return FrameSpec.build(
        2, [(2.0 / count, [[math.cos(angle)], [math.sin(angle)]]) for angle in angles]
    )


def mercedes_benz_frame() -> FrameSpec:
    """Three unit vectors at 90, 210 and 330 degrees, each weighted 2/3."""
    return harmonic_frame(3)


@dataclass(frozen=True)
class FrameDiagnostics:
    frame_error: float
    projection_error: float
    parseval_error: float

    def to_dict(self) -> dict[str, float]:
        return {
            "frame_error": self.frame_error,
            "projection_error": self.projection_error,
            "parseval_error": self.parseval_error,
        }


def frame_validate(frame: FrameSpec, seed: int = 0) -> FrameDiagnostics:
    """Check orthonormal bases, the frame condition and Parseval on random probes."""
    projection_error = 0.0
    for index, item in enumerate(frame.items):
        projection = item.projection
        error = max(
            float(np.max(np.abs(projection @ projection - projection))),
            float(np.max(np.abs(projection - projection.T))),
            float(np.max(np.abs(item.basis.T @ item.basis - np.eye(item.rank)))),
        )
        if error > PROJECTION_TOLERANCE:
            raise NotAProjection(f"subspace {index} is not an orthogonal projection (error {error:.3e})")
        projection_error = max(projection_error, error)

    total = sum(item.weight * item.projection for item in frame.items)
    frame_error = float(np.linalg.norm(total - np.eye(frame.ambient_dim), ord="fro"))
    if frame_error > FRAME_TOLERANCE:
        raise FrameConditionViolated(
            f"sum c_i P_i differs from the identity by {frame_error:.3e} in Frobenius norm"
        )

    probes = stream(seed).standard_normal((PARSEVAL_PROBES, frame.ambient_dim))
    norms = np.sum(probes * probes, axis=1)
    parts = sum(
        item.weight * np.sum((probes @ item.basis) ** 2, axis=1) for item in frame.items
    )
    parseval_error = float(np.max(np.abs(norms - parts) / norms))
    if parseval_error > FRAME_TOLERANCE:
        raise FrameConditionViolated(f"Parseval identity fails by {parseval_error:.3e}")
    return FrameDiagnostics(frame_error, projection_error, parseval_error)


def cauchy_schwarz_probe(frame: FrameSpec, points: Sequence[Any]) -> InequalityReport:
    """|sum_i c_i x_i|^2 <= sum_i c_i |x_i|^2 for x_i in E_i, exact arithmetic."""
    if len(points) != len(frame):
        raise FrameError(f"expected {len(frame)} points, got {len(points)}")
    projected = []
    for index, (item, point) in enumerate(zip(frame.items, points)):
        vector = np.asarray(point, dtype=float).reshape(-1)
        if vector.size != frame.ambient_dim:
            raise DimensionMismatch(f"point {index} has {vector.size} coordinates")
        inside = item.projection @ vector
        if np.linalg.norm(inside - vector) > PROJECTION_TOLERANCE * max(1.0, np.linalg.norm(vector)):
            logger.warning("Point %s is not in its subspace; projecting it", index)
        projected.append(inside)
    weights = frame.weights
    combined = sum(weight * vector for weight, vector in zip(weights, projected))
    lhs = float(combined @ combined)
    rhs = float(sum(weight * vector @ vector for weight, vector in zip(weights, projected)))
    return compare("cauchy_schwarz", Estimate.exact(lhs), Estimate.exact(rhs), "<=")


def _check_dim(spec: MixtureSpec, cfg: SdeConfig) -> None:
    if spec.dim != cfg.dim:
        raise DimensionMismatch(f"target dimension {spec.dim} does not match config {cfg.dim}")


def _entropy(spec: MixtureSpec, n: int, seed: int) -> Estimate:
    if spec.n_components == 1:
        return Estimate.exact(relative_entropy_closed(spec))
    return relative_entropy_mc(spec, n, seed)


def gaussian_transport_cost(spec: MixtureSpec) -> float:
    """Squared W2 distance between N(m, S) and gamma_d: |m|^2 + sum_j (sqrt(l_j) - 1)^2."""
    if spec.n_components != 1:
        raise NotSingleGaussian("the closed-form transport cost needs one component")
    component = spec.components[0]
    eigenvalues = np.linalg.eigvalsh(component.cov)
    return float(component.mean @ component.mean + np.sum((np.sqrt(eigenvalues) - 1.0) ** 2))


def talagrand_check(
    spec: MixtureSpec, cfg: SdeConfig, drift: Optional[DriftFunction] = None
) -> InequalityReport:
    """T_2(nu, gamma_d)^2 <= 2 ent(nu | gamma_d).

    Single Gaussians use the exact transport cost; mixtures use E|X_1 - B_1|^2
    of the Föllmer coupling, which bounds T_2^2 from above.
    """
    validate(spec)
    _check_dim(spec, cfg)
    details: dict[str, Any] = {"target": spec.to_document()}
    if spec.n_components == 1 and drift is None:
        lhs = Estimate.exact(gaussian_transport_cost(spec))
        details["lhs_source"] = "closed_form"
    else:
        batch = simulate(drift or mixture_drift_closed(spec), cfg)
        gap = batch.terminal_points - batch.brownian_endpoints
        lhs = Estimate.from_samples(np.sum(gap * gap, axis=1), cfg.seed)
        details["lhs_source"] = "follmer_coupling"
    rhs = scale_estimate(_entropy(spec, cfg.n_paths, derive_seed(cfg.seed, 1)), 2.0)
    return compare("talagrand", lhs, rhs, "<=", details=details)


def lsi_check(spec: MixtureSpec, n: int, seed: int) -> InequalityReport:
    """ent(nu | gamma_d) <= 1/2 I(nu | gamma_d)."""
    validate(spec)
    lhs = _entropy(spec, n, seed)
    rhs = scale_estimate(fisher_information_mc(spec, n, derive_seed(seed, 2)), 0.5)
    return compare("log_sobolev", lhs, rhs, "<=", details={"target": spec.to_document()})


def epi_check(
    eta: MixtureSpec, xi: MixtureSpec, thetas: Sequence[float], n: int, seed: int
) -> list[InequalityReport]:
    """S(cos t eta + sin t xi) >= cos^2 t S(eta) + sin^2 t S(xi) for each angle t."""
    validate(eta)
    validate(xi)
    if eta.dim != xi.dim:
        raise DimensionMismatch(f"eta has dimension {eta.dim} but xi has {xi.dim}")
    xi_seed = derive_seed(seed, 3)
    eta_entropy = shannon_entropy_mc(eta, n, seed)
    xi_entropy = shannon_entropy_mc(xi, n, xi_seed)

    reports = []
    for theta in thetas:
        cosine, sine = math.cos(theta), math.sin(theta)
        if sine == 0.0:
            lhs = eta_entropy
        elif cosine == 0.0:
            lhs = xi_entropy
        else:
            combined = combine_mixtures(eta, xi, cosine, sine)
            lhs = shannon_entropy_mc(combined, n, derive_seed(seed, 8))
        rhs = weighted_sum([eta_entropy, xi_entropy], [cosine**2, sine**2])
        reports.append(compare("shannon_epi", lhs, rhs, ">=", details={"theta": float(theta)}))
    return reports


def _projected_gaussian(spec: MixtureSpec, basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    component = spec.components[0]
    return basis.T @ component.mean, basis.T @ component.cov @ basis


def bl_superadditivity_check(frame: FrameSpec, spec: MixtureSpec) -> InequalityReport:
    """ent(nu | gamma_d) >= sum_i c_i ent(nu o P_i^-1 | gamma_{E_i}), both sides in closed form."""
    validate(spec)
    if spec.n_components != 1:
        raise NotSingleGaussian("superadditivity is checked for single Gaussians only")
    if spec.dim != frame.ambient_dim:
        raise DimensionMismatch(f"target dimension {spec.dim} does not match frame {frame.ambient_dim}")
    lhs = relative_entropy_closed(spec)
    parts = [
        gaussian_relative_entropy(*_projected_gaussian(spec, item.basis)) for item in frame.items
    ]
    rhs = float(np.dot(frame.weights, parts))
    return compare(
        "brascamp_lieb_superadditivity",
        Estimate.exact(lhs),
        Estimate.exact(rhs),
        ">=",
        details={"marginal_entropies": parts},
    )


def reversed_bl_check(
    frame: FrameSpec,
    targets: Sequence[MixtureSpec],
    cfg: SdeConfig,
    drift_scale: float = 1.0,
) -> InequalityReport:
    """ent(law of Y_1 | gamma_d) <= sum_i c_i ent(nu_i | gamma_i) for Y = sum_i c_i X_i.

    Each X_i is the Föllmer process of nu_i driven by P_i B for one shared
    Brownian motion B, so Y = B + sum_i c_i U_i. The per-path energy chain
    |sum_i c_i u_i|^2 <= sum_i c_i |u_i|^2 is checked at every step.
    """
    if len(targets) != len(frame):
        raise FrameError(f"expected {len(frame)} targets, got {len(targets)}")
    if cfg.dim != frame.ambient_dim:
        raise DimensionMismatch(f"config dimension {cfg.dim} does not match frame {frame.ambient_dim}")
    drifts = []
    for item, target in zip(frame.items, targets):
        validate(target)
        if target.dim != item.rank:
            raise DimensionMismatch(f"target dimension {target.dim} does not match rank {item.rank}")
        drift = affine_gaussian_drift(target)
        drifts.append(drift if drift_scale == 1.0 else drift.scaled(drift_scale))

    batch = simulate_coupled(
        drifts,
        noise_maps=[item.basis.T for item in frame.items],
        mix_maps=[item.weight * item.basis for item in frame.items],
        cfg=cfg,
        chain_weights=frame.weights,
    )
    scale = max(1.0, float(np.max(np.abs(batch.chain_margin_min))))
    chain_min = float(np.min(batch.chain_margin_min))
    chain_holds = chain_min >= -ROUNDING_FLOOR * scale

    if all(target.is_standard for target in targets) and drift_scale == 1.0:
        # every drift vanishes, so Y_1 = B_1 exactly
        lhs = Estimate.exact(0.0)
    else:
        lhs = gaussian_fit_entropy(batch.combined_terminal, cfg.seed)
    rhs = Estimate.exact(
        float(np.dot(frame.weights, [relative_entropy_closed(target) for target in targets]))
    )
    report = compare(
        "reversed_brascamp_lieb",
        lhs,
        rhs,
        "<=",
        details={
            "chain_margin_min": chain_min,
            "chain_holds": chain_holds,
            "combined_energy": Estimate.from_samples(batch.combined_energy, cfg.seed).to_dict(),
        },
    )
    if not chain_holds:
        logger.error("Energy chain fails on some path (min margin %.3e)", chain_min)
        report = replace(report, verdict=Verdict.VIOLATION_FLAGGED)
    return report


@dataclass(frozen=True, eq=False)
class GaussianFactor:
    """F(y) = exp(a'y - 1/2 y'Qy) on a subspace, in its basis coordinates."""

    a: np.ndarray
    q: np.ndarray

    @classmethod
    def build(cls, a: Any, q: Any) -> GaussianFactor:
        linear = np.asarray(a, dtype=float).reshape(-1)
        quadratic = np.atleast_2d(np.asarray(q, dtype=float))
        if quadratic.shape != (linear.size, linear.size):
            raise DimensionMismatch(f"q has shape {quadratic.shape}, expected {linear.size} square")
        return cls(linear, quadratic)

    def log_value(self, points: np.ndarray) -> np.ndarray:
        return points @ self.a - 0.5 * np.einsum("ni,ij,nj->n", points, self.q, points)

    def log_integral(self) -> float:
        """log of the integral against the standard Gaussian of the same dimension."""
        shifted = np.eye(self.a.size) + self.q
        if np.linalg.eigvalsh(0.5 * (shifted + shifted.T))[0] <= 0.0:
            raise NonIntegrableFactor("I + Q must be positive definite")
        _, log_det = np.linalg.slogdet(shifted)
        return float(-0.5 * log_det + 0.5 * self.a @ np.linalg.solve(shifted, self.a))

    def to_document(self) -> dict[str, Any]:
        return {"a": self.a.tolist(), "q": self.q.tolist()}


def bl_functional_check(
    frame: FrameSpec, functions: Sequence[GaussianFactor], n: int, seed: int
) -> InequalityReport:
    """int prod_i F_i(P_i x)^{c_i} d gamma_d <= prod_i (int F_i d gamma_i)^{c_i}."""
    if len(functions) != len(frame):
        raise FrameError(f"expected {len(frame)} functions, got {len(functions)}")
    for item, factor in zip(frame.items, functions):
        if factor.a.size != item.rank:
            raise DimensionMismatch(f"factor dimension {factor.a.size} does not match rank {item.rank}")
    log_rhs = float(
        sum(item.weight * factor.log_integral() for item, factor in zip(frame.items, functions))
    )
    points = stream(seed).standard_normal((n, frame.ambient_dim))
    log_samples = sum(
        item.weight * factor.log_value(points @ item.basis)
        for item, factor in zip(frame.items, functions)
    )
    lhs = Estimate.from_samples(np.exp(log_samples), seed)
    return compare(
        "brascamp_lieb_functional",
        lhs,
        Estimate.exact(math.exp(log_rhs)),
        "<=",
        details={"log_rhs": log_rhs},
    )


def energy_bound_check(drift: DriftFunction, cfg: SdeConfig) -> InequalityReport:
    """ent(law of X_1 | gamma_d) <= 1/2 E int |u_t|^2 dt.

    The left side is the moment-fitted Gaussian entropy, exact up to sampling
    error when the drift is affine (its terminal law is then Gaussian).
    """
    batch = simulate(drift, cfg)
    lhs = gaussian_fit_entropy(batch.terminal_points, cfg.seed)
    return compare(
        "energy_bound",
        lhs,
        batch.energy_estimate(),
        "<=",
        details={"drift": drift.describe()},
    )


def epi_coupling_check(
    eta: MixtureSpec, xi: MixtureSpec, theta: float, cfg: SdeConfig
) -> list[InequalityReport]:
    """Independent Föllmer processes for eta and xi mixed at angle theta.

    Returns the bound ent(nu_theta) <= 1/2 E|cos U + sin V|^2 and the identity
    of that energy with cos^2 ent(eta) + sin^2 ent(xi) + cos sin <E eta, E xi>.
    """
    validate(eta)
    validate(xi)
    if eta.dim != xi.dim or eta.dim != cfg.dim:
        raise DimensionMismatch("eta, xi and the config must share one dimension")
    dim = eta.dim
    cosine, sine = math.cos(theta), math.sin(theta)
    identity = np.eye(dim)
    zeros = np.zeros((dim, dim))
    batch = simulate_coupled(
        [mixture_drift_closed(eta), mixture_drift_closed(xi)],
        noise_maps=[np.hstack([identity, zeros]), np.hstack([zeros, identity])],
        mix_maps=[cosine * identity, sine * identity],
        cfg=cfg.with_dim(2 * dim),
        chain_weights=[1.0, 1.0],
    )
    energy = Estimate.from_samples(batch.combined_energy, cfg.seed)
    mixed = combine_mixtures(eta, xi, cosine, sine)
    entropy = _entropy(mixed, cfg.n_paths, derive_seed(cfg.seed, 4))
    eta_mean, _ = mixture_moments(eta)
    xi_mean, _ = mixture_moments(xi)
    predicted = weighted_sum(
        [
            _entropy(eta, cfg.n_paths, derive_seed(cfg.seed, 5)),
            _entropy(xi, cfg.n_paths, derive_seed(cfg.seed, 6)),
        ],
        [cosine**2, sine**2],
    )
    predicted = Estimate(
        value=predicted.value + cosine * sine * float(eta_mean @ xi_mean),
        std_error=predicted.std_error,
        n_samples=predicted.n_samples,
        seed=normalize_seed(cfg.seed),
    )
    details = {"theta": float(theta)}
    return [
        compare("epi_coupling_bound", entropy, energy, "<=", details=details),
        equality_check("epi_coupling_energy", energy, predicted, details=details),
    ]
