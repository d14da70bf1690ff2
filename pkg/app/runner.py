"""Command dispatch: turns a validated RunConfig into a report document."""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from app.config import (
    FunctionalModel,
    RunConfig,
    factors_from_models,
    frame_from_model,
    functional_from_model,
    mixture_from_model,
    parse_config,
    policy_from_model,
)
from app.report import (
    STATUS_ERROR,
    _utcnow_iso,
    build_report,
    error_report,
    write_report,
)
from app.settings import EngineSettings
from scaffolding.templates import (
    CLARK_OCONE_CASE,
    ENERGY_BOUND_CASE,
    EPI_COUPLING_CASE,
    GIRSANOV_CASE,
    HEAT_GRADIENT_CASE,
    PATHWISE_GRADIENT_CASE,
    RANDOM_POLICY_CASE,
    canonical_suite,
)
from tools.cross_checks import (
    clark_ocone_checks,
    girsanov_checks,
    heat_gradient_checks,
    pathwise_gradient_check,
    random_policy_checks,
)
from tools.entropy_rep import (
    MARTINGALE_FRACTION,
    STANDARDIZED_LIMIT,
    EntropyReport,
    estimate_entropy,
)
from tools.follmer import DriftFunction, mixture_drift_closed
from tools.frames import (
    InequalityReport,
    bl_functional_check,
    bl_superadditivity_check,
    compare,
    energy_bound_check,
    epi_check,
    epi_coupling_check,
    equality_check,
    frame_validate,
    lsi_check,
    reversed_bl_check,
    talagrand_check,
)
from tools.laplace_var import (
    FunctionalKind,
    OptimizationResult,
    OptimizerSettings,
    ParametricPolicy,
    PolicyKind,
    PolicyParams,
    TerminalFunctional,
    drift_recovery_error,
    gap_between,
    laplace_reference,
    objective_estimate,
    optimize_policy,
    write_trace,
)
from tools.measure_core import Estimate, MixtureSpec
from tools.pathsim import SdeConfig, simulate, write_path_dump


logger = logging.getLogger(__name__)

HandlerResult = tuple[dict[str, Any], list[InequalityReport]]

LINEAR_RECOVERY = 0.02
MIXTURE_RECOVERY = 0.05


def sde_config(config: RunConfig, settings: EngineSettings, dim: int) -> SdeConfig:
    return SdeConfig(
        n_steps=config.sde.n_steps or settings.n_steps,
        n_paths=config.sde.n_paths or settings.n_paths,
        seed=config.seed,
        dim=dim,
        workers=settings.workers,
        chunk_size=settings.chunk_size,
    )


def _samples(config: RunConfig, settings: EngineSettings) -> int:
    return config.mc_samples or config.sde.n_paths or settings.n_paths


def _target_drift(spec: MixtureSpec, config: RunConfig) -> DriftFunction:
    drift = mixture_drift_closed(spec)
    scale = config.hooks.drift_scale
    return drift if scale == 1.0 else drift.scaled(scale)


def _dump_target(config: RunConfig) -> Path:
    if config.output:
        return Path(config.output).with_suffix(".paths.csv")
    return Path("paths.csv")


def _dump_paths(drift: DriftFunction, cfg: SdeConfig, config: RunConfig) -> str:
    batch = simulate(drift, cfg, record_paths=True)
    return str(write_path_dump(batch, _dump_target(config)))


def run_entropy(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    spec = mixture_from_model(config.target)
    cfg = sde_config(config, settings, spec.dim)
    drift = _target_drift(spec, config)
    report = estimate_entropy(spec, cfg, drift=drift, reference_samples=config.mc_samples)
    results: dict[str, Any] = {"entropy": report.to_dict()}
    if config.dump_paths:
        results["path_dump"] = _dump_paths(drift, cfg, config)
    verdict = equality_check(
        "entropy_representation",
        report.energy_estimate,
        report.reference,
        extra_tolerance=abs(report.bias_proxy or 0.0),
        details={"bias_proxy": report.bias_proxy},
    )
    return results, [verdict, *_path_law_verdicts(report)]


def _path_law_verdicts(report: EntropyReport) -> list[InequalityReport]:
    martingale = compare(
        "martingale_flatness",
        Estimate.exact(report.martingale_fraction_within),
        Estimate.exact(MARTINGALE_FRACTION),
        ">=",
        details={"max_deviation": report.martingale_max_dev},
    )
    terminal = compare(
        "terminal_law",
        Estimate.exact(report.terminal_moment_dev),
        Estimate.exact(STANDARDIZED_LIMIT),
        "<=",
    )
    return [martingale, terminal]


def _laplace_policy(config: RunConfig, dim: int) -> PolicyParams:
    if config.policy is None:
        return PolicyParams.zeros(PolicyKind.CONSTANT, dim)
    return policy_from_model(config.policy, dim)


def run_laplace(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    functional = functional_from_model(config.functional)
    policy = _laplace_policy(config, functional.dim)
    cfg = sde_config(config, settings, functional.dim)
    laplace = laplace_reference(functional, cfg)
    objective = objective_estimate(functional, policy, cfg)
    results = {
        "functional": functional.to_document(),
        "policy": policy.to_document(),
        "objective": objective,
        "log_laplace": laplace,
        "duality_gap": gap_between(laplace, objective),
        "exact_log_laplace": functional.exact_log_laplace(),
    }
    return results, [compare("boue_dupuis_lower_bound", objective, laplace, "<=")]


def run_optimize(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    functional = functional_from_model(config.functional)
    cfg = sde_config(config, settings, functional.dim)
    options = config.optimizer.model_dump() if config.optimizer else {}
    result = optimize_policy(
        functional, PolicyKind(config.policy.kind), cfg, OptimizerSettings(**options)
    )
    laplace = laplace_reference(functional, cfg)
    results = {
        "functional": functional.to_document(),
        "optimization": result.to_dict(),
        "log_laplace": laplace,
        "duality_gap": gap_between(laplace, result.objective),
        "exact_log_laplace": functional.exact_log_laplace(),
    }
    if config.trace_path:
        write_trace(result, config.trace_path)
        results["trace_path"] = config.trace_path
    verdicts = [compare("boue_dupuis_lower_bound", result.objective, laplace, "<=")]
    verdicts.extend(_recovery_verdicts(functional, result))
    return results, verdicts


def _recovery_verdicts(
    functional: TerminalFunctional, result: OptimizationResult
) -> list[InequalityReport]:
    """Optimum and drift recovery, for functionals maximized by a constant drift."""
    target = functional.optimal_constant_drift()
    exact = functional.exact_log_laplace()
    if target is None or exact is None:
        return []
    if functional.kind is FunctionalKind.LINEAR:
        value_slack, drift_limit = 0.0, LINEAR_RECOVERY * max(1.0, float(np.max(np.abs(target))))
    else:
        value_slack, drift_limit = MIXTURE_RECOVERY * max(1.0, abs(exact)), MIXTURE_RECOVERY
    optimum = equality_check(
        "optimum_recovery",
        result.objective,
        Estimate.exact(exact),
        extra_tolerance=value_slack,
    )
    drift = compare(
        "optimal_drift_recovery",
        Estimate.exact(drift_recovery_error(result.policy, target)),
        Estimate.exact(drift_limit),
        "<=",
        details={"target": target.tolist()},
    )
    return [optimum, drift]


def run_talagrand(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    spec = mixture_from_model(config.target)
    cfg = sde_config(config, settings, spec.dim)
    drift = None if config.hooks.drift_scale == 1.0 else _target_drift(spec, config)
    report = talagrand_check(spec, cfg, drift=drift)
    results: dict[str, Any] = {}
    if config.dump_paths:
        results["path_dump"] = _dump_paths(drift or mixture_drift_closed(spec), cfg, config)
    return results, [report]


def run_lsi(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    spec = mixture_from_model(config.target)
    return {}, [lsi_check(spec, _samples(config, settings), config.seed)]


def run_epi(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    eta = mixture_from_model(config.eta)
    xi = mixture_from_model(config.xi)
    reports = epi_check(eta, xi, config.thetas, _samples(config, settings), config.seed)
    return {}, reports


def run_bl(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    frame = frame_from_model(config.frame)
    results: dict[str, Any] = {
        "frame": frame.to_document(),
        "frame_diagnostics": frame_validate(frame, config.seed),
    }
    reports = []
    if config.target is not None:
        reports.append(bl_superadditivity_check(frame, mixture_from_model(config.target)))
    if config.functions:
        factors = factors_from_models(config.functions)
        reports.append(
            bl_functional_check(frame, factors, _samples(config, settings), config.seed)
        )
    return results, reports


def run_rbl(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    frame = frame_from_model(config.frame)
    targets = [mixture_from_model(model) for model in config.targets]
    cfg = sde_config(config, settings, frame.ambient_dim)
    report = reversed_bl_check(frame, targets, cfg, drift_scale=config.hooks.drift_scale)
    return {"frame": frame.to_document()}, [report]


def _with_case(reports: list[InequalityReport], name: str) -> list[InequalityReport]:
    return [replace(report, details={**report.details, "case": name}) for report in reports]


def run_verify_all(config: RunConfig, settings: EngineSettings) -> HandlerResult:
    """Run the canonical suite with this document's seed, sde block and hooks."""
    shared = config.model_dump(
        include={"seed", "sde", "mc_samples", "hooks"}, exclude_none=True
    )
    cases = []
    verdicts: list[InequalityReport] = []
    for case in canonical_suite():
        name = case.pop("name")
        case_config = parse_config({**case, **shared})
        results, reports = HANDLERS[case_config.command](case_config, settings)
        cases.append({"name": name, "command": case_config.command, "results": results})
        verdicts.extend(_with_case(reports, name))
        logger.info("Case %s finished with %s verdicts", name, len(reports))

    policy = PolicyParams.affine(ENERGY_BOUND_CASE["slopes"], ENERGY_BOUND_CASE["offsets"])
    bound_cfg = sde_config(config, settings, policy.dim)
    bound = energy_bound_check(ParametricPolicy(policy), bound_cfg)
    verdicts.extend(_with_case([bound], ENERGY_BOUND_CASE["name"]))

    eta = MixtureSpec.from_document(EPI_COUPLING_CASE["eta"])
    xi = MixtureSpec.from_document(EPI_COUPLING_CASE["xi"])
    coupling_cfg = sde_config(config, settings, eta.dim)
    verdicts.extend(
        _with_case(
            epi_coupling_check(eta, xi, EPI_COUPLING_CASE["theta"], coupling_cfg),
            EPI_COUPLING_CASE["name"],
        )
    )
    verdicts.extend(_cross_check_verdicts(config, settings))
    return {"cases": cases}, verdicts


def _cross_check_verdicts(config: RunConfig, settings: EngineSettings) -> list[InequalityReport]:
    shift = GIRSANOV_CASE["shift"]
    verdicts = _with_case(
        girsanov_checks(shift, sde_config(config, settings, len(shift))), GIRSANOV_CASE["name"]
    )

    functionals = [
        functional_from_model(FunctionalModel.model_validate(document))
        for document in RANDOM_POLICY_CASE["functionals"]
    ]
    policy_cfg = sde_config(config, settings, functionals[0].dim)
    policy_cfg = policy_cfg.with_paths(min(policy_cfg.n_paths, RANDOM_POLICY_CASE["max_paths"]))
    verdicts.extend(
        _with_case(
            random_policy_checks(
                functionals, RANDOM_POLICY_CASE["count"], RANDOM_POLICY_CASE["bins"], policy_cfg
            ),
            RANDOM_POLICY_CASE["name"],
        )
    )

    functional = functional_from_model(
        FunctionalModel.model_validate(PATHWISE_GRADIENT_CASE["functional"])
    )
    policy = PolicyParams.random(
        PolicyKind.AFFINE, functional.dim, PATHWISE_GRADIENT_CASE["bins"], seed=config.seed, scale=0.5
    )
    gradient_cfg = SdeConfig(
        n_steps=PATHWISE_GRADIENT_CASE["n_steps"],
        n_paths=PATHWISE_GRADIENT_CASE["n_paths"],
        seed=config.seed,
        dim=functional.dim,
        workers=settings.workers,
        chunk_size=settings.chunk_size,
    )
    verdicts.extend(
        _with_case(
            [pathwise_gradient_check(functional, policy, gradient_cfg)],
            PATHWISE_GRADIENT_CASE["name"],
        )
    )

    samples = _samples(config, settings)
    heat_target = MixtureSpec.from_document(HEAT_GRADIENT_CASE["target"])
    verdicts.extend(
        _with_case(
            heat_gradient_checks(heat_target, samples, config.seed), HEAT_GRADIENT_CASE["name"]
        )
    )
    bridge_target = MixtureSpec.from_document(CLARK_OCONE_CASE["target"])
    verdicts.extend(
        _with_case(
            clark_ocone_checks(bridge_target, samples, config.seed), CLARK_OCONE_CASE["name"]
        )
    )
    return verdicts


HANDLERS: dict[str, Callable[[RunConfig, EngineSettings], HandlerResult]] = {
    "entropy": run_entropy,
    "laplace": run_laplace,
    "optimize": run_optimize,
    "talagrand": run_talagrand,
    "lsi": run_lsi,
    "epi": run_epi,
    "bl": run_bl,
    "rbl": run_rbl,
    "verify-all": run_verify_all,
}


def run(config: RunConfig, settings: Optional[EngineSettings] = None) -> dict[str, Any]:
    """Execute one run document and return its report (written to ``config.output`` if set)."""
    settings = settings or EngineSettings()
    started_at = _utcnow_iso()
    started = time.perf_counter()
    config_echo = config.model_dump(mode="json", exclude_none=True)
    try:
        results, verdicts = HANDLERS[config.command](config, settings)
    except Exception as error:
        logger.exception("Run of %s failed", config.command)
        message = f"{type(error).__name__}: {error}"
        report = error_report(config.command, config_echo, message, started_at)
    else:
        report = build_report(
            command=config.command,
            config_echo=config_echo,
            results=results,
            verdicts=verdicts,
            started_at=started_at,
            wall_clock_seconds=round(time.perf_counter() - started, 6),
        )
    if config.output:
        write_report(report, config.output)
    if report["status"] == STATUS_ERROR:
        logger.error("Run of %s ended with an error report", config.command)
    return report
