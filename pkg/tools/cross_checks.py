"""Checks of the engine against closed forms and finite differences.

Each check returns ``InequalityReport`` entries so verify-all can list them
next to the inequality suite.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Sequence

import numpy as np

from tools.follmer import (
    ClassSDensity,
    affine_gaussian_drift,
    clark_ocone_drift_mc,
    heat_apply_mc,
    mixture_drift_closed,
)
from tools.frames import InequalityReport, compare, equality_check
from tools.laplace_var import (
    PolicyKind,
    PolicyParams,
    TerminalFunctional,
    duality_gap,
    objective_and_gradient,
)
from tools.measure_core import Estimate, MixtureSpec, log_relative_density, validate
from tools.pathsim import SdeConfig, girsanov_reweight, simulate
from tools.streams import derive_seed, normalize_seed, stream


logger = logging.getLogger(__name__)

POINT_COUNT = 20
HEAT_DIFFERENCE_STEP = 1e-4
GRADIENT_STEP = 1e-6
GRADIENT_RTOL = 1e-5
GRADIENT_ATOL = 1e-7
CLARK_OCONE_FLOOR = 1e-9
POLICY_SEED_LABEL = 19
GAP_SEED_LABEL = 23
POINT_SEED_LABEL = 29
HEAT_SEED_LABEL = 31
INNER_SEED_LABEL = 37


def _point_estimate(value: float, std_error: float, n: int, seed: int) -> Estimate:
    return Estimate(value=float(value), std_error=float(std_error), n_samples=n, seed=normalize_seed(seed))


def girsanov_checks(shift: Sequence[float], cfg: SdeConfig) -> list[InequalityReport]:
    """Reweighted moments of B_1 under the constant drift ``shift``: E x_1 = 0, E x_1^2 = 1, E 1 = 1."""
    spec = MixtureSpec.gaussian(shift, np.eye(len(shift)))
    batch = simulate(affine_gaussian_drift(spec), cfg.with_dim(spec.dim))
    moments = (
        ("girsanov_first_moment", lambda x: x[:, 0], 0.0),
        ("girsanov_second_moment", lambda x: x[:, 0] ** 2, 1.0),
        ("girsanov_total_mass", lambda x: np.ones(x.shape[0]), 1.0),
    )
    return [
        equality_check(name, girsanov_reweight(batch, g), Estimate.exact(expected))
        for name, g, expected in moments
    ]


def random_policy_checks(
    functionals: Sequence[TerminalFunctional], count: int, bins: int, cfg: SdeConfig
) -> list[InequalityReport]:
    """duality_gap >= 0 up to noise for ``count`` random policies cycling through ``functionals``."""
    reports = []
    for index in range(count):
        functional = functionals[index % len(functionals)]
        kind = PolicyKind.CONSTANT if index % 2 == 0 else PolicyKind.AFFINE
        policy = PolicyParams.random(
            kind, functional.dim, bins, seed=derive_seed(cfg.seed, POLICY_SEED_LABEL, index)
        )
        run_cfg = cfg.with_dim(functional.dim).with_seed(derive_seed(cfg.seed, GAP_SEED_LABEL, index))
        gap = duality_gap(functional, policy, run_cfg)
        reports.append(
            compare(
                "random_policy_lower_bound",
                gap,
                Estimate.exact(0.0),
                ">=",
                details={"functional": functional.kind.value, "policy": kind.value, "index": index},
            )
        )
    return reports


def pathwise_gradient_check(
    functional: TerminalFunctional, policy: PolicyParams, cfg: SdeConfig
) -> InequalityReport:
    """Adjoint gradient against central differences of the frozen-noise objective.

    The lhs is the worst ratio |adjoint - difference| / (atol + rtol |difference|);
    it must stay at or below 1.
    """
    _, gradient = objective_and_gradient(functional, policy, cfg)
    base = policy.vector()
    numeric = np.zeros_like(base)
    for index in range(base.size):
        shift = np.zeros_like(base)
        shift[index] = GRADIENT_STEP
        up, _ = objective_and_gradient(functional, policy.with_vector(base + shift), cfg)
        down, _ = objective_and_gradient(functional, policy.with_vector(base - shift), cfg)
        numeric[index] = (up.value - down.value) / (2.0 * GRADIENT_STEP)
    ratios = np.abs(gradient - numeric) / (GRADIENT_ATOL + GRADIENT_RTOL * np.abs(numeric))
    return compare(
        "pathwise_gradient",
        Estimate.exact(float(np.max(ratios))),
        Estimate.exact(1.0),
        "<=",
        details={"n_parameters": int(base.size), "max_abs_error": float(np.max(np.abs(gradient - numeric)))},
    )


def heat_log_gradient_mc(
    spec: MixtureSpec, s: float, x: Any, n: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of log heat_apply_mc on shared draws, with ratio standard errors."""
    point = np.asarray(x, dtype=float).reshape(-1)
    noise = math.sqrt(s) * stream(seed).standard_normal((n, spec.dim))
    gradient = np.zeros(spec.dim)
    errors = np.zeros(spec.dim)
    for axis, direction in enumerate(np.eye(spec.dim)):
        offset = HEAT_DIFFERENCE_STEP * direction
        up = heat_apply_mc(spec, s, point + offset, n, seed)
        down = heat_apply_mc(spec, s, point - offset, n, seed)
        gradient[axis] = (math.log(up.value) - math.log(down.value)) / (2.0 * HEAT_DIFFERENCE_STEP)
        rho_up = np.exp(log_relative_density(spec, point + offset + noise))
        rho_down = np.exp(log_relative_density(spec, point - offset + noise))
        numerator = (rho_up - rho_down) / (2.0 * HEAT_DIFFERENCE_STEP)
        denominator = 0.5 * (rho_up + rho_down)
        ratio = numerator.mean() / denominator.mean()
        residuals = numerator - ratio * denominator
        errors[axis] = residuals.std(ddof=1) / (math.sqrt(n) * denominator.mean())
    return gradient, errors


def heat_gradient_checks(spec: MixtureSpec, n: int, seed: int) -> list[InequalityReport]:
    """Closed-form mixture drift against differences of the Monte-Carlo heat semigroup."""
    validate(spec)
    drift = mixture_drift_closed(spec)
    rng = stream(seed, POINT_SEED_LABEL)
    reports = []
    for index in range(POINT_COUNT):
        t = float(rng.uniform(0.05, 0.9))
        x = 1.5 * rng.standard_normal(spec.dim)
        point_seed = derive_seed(seed, HEAT_SEED_LABEL, index)
        numeric, errors = heat_log_gradient_mc(spec, 1.0 - t, x, n, point_seed)
        exact = drift.evaluate(t, x)
        for axis in range(spec.dim):
            reports.append(
                equality_check(
                    "heat_gradient",
                    _point_estimate(numeric[axis], errors[axis], n, point_seed),
                    Estimate.exact(float(exact[axis])),
                    details={"t": t, "x": x.tolist(), "axis": axis},
                )
            )
    return reports


def clark_ocone_checks(target: MixtureSpec, n_inner: int, seed: int) -> list[InequalityReport]:
    """Clark-Ocone drift of Phi = eps + rho(w_1) against the closed-form bridge drift."""
    density = ClassSDensity.build(target.dim, [1.0], target, CLARK_OCONE_FLOOR)
    inner_seed = derive_seed(seed, INNER_SEED_LABEL)
    estimated = clark_ocone_drift_mc(density, n_inner, seed_rule=inner_seed)
    exact = mixture_drift_closed(target)
    rng = stream(seed, POINT_SEED_LABEL)
    reports = []
    for _ in range(POINT_COUNT):
        t = float(rng.uniform(0.0, 0.95))
        x = rng.standard_normal(target.dim)
        value, error = estimated.evaluate_with_error(t, x)
        expected = exact.evaluate(t, x)
        for axis in range(target.dim):
            reports.append(
                equality_check(
                    "clark_ocone_bridge",
                    _point_estimate(value[axis], error[axis], n_inner, inner_seed),
                    Estimate.exact(float(expected[axis])),
                    details={"t": t, "x": x.tolist(), "axis": axis},
                )
            )
    logger.debug("Clark-Ocone checks done with %s inner samples", n_inner)
    return reports
