"""Run documents: pydantic schema, semantic validation and object builders."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from tools.frames import (
    FrameError,
    FrameSpec,
    GaussianFactor,
    coordinate_frame,
    frame_validate,
    mercedes_benz_frame,
)
from tools.laplace_var import (
    PolicyKind,
    PolicyParams,
    TerminalFunctional,
    VariationalError,
)
from tools.measure_core import MeasureError, MixtureSpec, validate


logger = logging.getLogger(__name__)

COMMANDS = ("entropy", "laplace", "optimize", "talagrand", "lsi", "epi", "bl", "rbl", "verify-all")

REQUIRED_BLOCKS: dict[str, tuple[str, ...]] = {
    "entropy": ("target",),
    "laplace": ("functional",),
    "optimize": ("functional", "policy"),
    "talagrand": ("target",),
    "lsi": ("target",),
    "epi": ("eta", "xi", "thetas"),
    "bl": ("frame",),
    "rbl": ("frame", "targets"),
    "verify-all": (),
}


class SchemaError(BaseModel):
    """One violation in a run document, located by a JSONPath-style path."""

    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


class ConfigError(ValueError):
    """Raised when a run document has one or more schema violations."""

    def __init__(self, errors: list[SchemaError]):
        self.errors = errors
        super().__init__("; ".join(str(error) for error in errors))


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ComponentModel(StrictModel):
    weight: float
    mean: list[float]
    cov: list[list[float]]


class MixtureModel(StrictModel):
    dim: int = Field(ge=1)
    components: list[ComponentModel] = Field(min_length=1)


class SdeModel(StrictModel):
    n_steps: Optional[int] = Field(default=None, ge=2)
    n_paths: Optional[int] = Field(default=None, ge=2)


class FrameItemModel(StrictModel):
    c: float
    basis: list[list[float]]


class FrameModel(StrictModel):
    preset: Optional[Literal["coordinate", "mercedes_benz"]] = None
    ambient_dim: Optional[int] = Field(default=None, ge=1)
    items: Optional[list[FrameItemModel]] = None


class FunctionalModel(StrictModel):
    kind: Literal["Linear", "Quadratic", "LogMixture"]
    a: Optional[list[float]] = None
    q: Optional[list[list[float]]] = None
    target: Optional[MixtureModel] = None


class PolicyModel(StrictModel):
    kind: Literal["ConstantDrift", "AffineDrift"]
    c: Optional[list[float]] = None
    slopes: Optional[list[list[list[float]]]] = None
    offsets: Optional[list[list[float]]] = None


class OptimizerModel(StrictModel):
    iterations: int = Field(default=100, ge=1)
    step_size: float = Field(default=0.2, gt=0.0)
    batch: int = Field(default=1000, ge=2)
    bins: int = Field(default=4, ge=1)


class FactorModel(StrictModel):
    a: list[float]
    q: list[list[float]]


class HooksModel(StrictModel):
    drift_scale: float = 1.0


class RunConfig(StrictModel):
    command: Literal[
        "entropy", "laplace", "optimize", "talagrand", "lsi", "epi", "bl", "rbl", "verify-all"
    ]
    seed: int = Field(ge=0, lt=2**64)
    sde: SdeModel = Field(default_factory=SdeModel)
    target: Optional[MixtureModel] = None
    eta: Optional[MixtureModel] = None
    xi: Optional[MixtureModel] = None
    thetas: Optional[list[float]] = None
    frame: Optional[FrameModel] = None
    targets: Optional[list[MixtureModel]] = None
    functional: Optional[FunctionalModel] = None
    policy: Optional[PolicyModel] = None
    optimizer: Optional[OptimizerModel] = None
    functions: Optional[list[FactorModel]] = None
    mc_samples: Optional[int] = Field(default=None, ge=2)
    output: Optional[str] = None
    dump_paths: bool = False
    trace_path: Optional[str] = None
    hooks: HooksModel = Field(default_factory=HooksModel)


def _format_path(location: tuple[Union[str, int], ...]) -> str:
    path = "$"
    for part in location:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def _schema_errors(error: ValidationError) -> list[SchemaError]:
    errors = []
    for item in error.errors():
        message = item["msg"]
        if item["type"] == "missing":
            message = "field required"
        elif item["type"] == "extra_forbidden":
            message = "unknown key"
        errors.append(SchemaError(path=_format_path(tuple(item["loc"])), message=message))
    return errors


def mixture_from_model(model: MixtureModel) -> MixtureSpec:
    return validate(
        MixtureSpec.from_components(
            model.dim, [(item.weight, item.mean, item.cov) for item in model.components]
        )
    )


def frame_from_model(model: FrameModel) -> FrameSpec:
    if model.preset == "coordinate":
        return coordinate_frame(model.ambient_dim or 2)
    if model.preset == "mercedes_benz":
        return mercedes_benz_frame()
    if model.ambient_dim is None or not model.items:
        raise FrameError("a frame needs a preset or ambient_dim with items")
    frame = FrameSpec.build(model.ambient_dim, [(item.c, item.basis) for item in model.items])
    frame_validate(frame)
    return frame


def functional_from_model(model: FunctionalModel) -> TerminalFunctional:
    if model.kind == "Linear":
        if model.a is None:
            raise VariationalError("a Linear functional needs `a`")
        return TerminalFunctional.linear(model.a)
    if model.kind == "Quadratic":
        if model.q is None:
            raise VariationalError("a Quadratic functional needs `q`")
        return TerminalFunctional.quadratic(model.q)
    if model.target is None:
        raise VariationalError("a LogMixture functional needs `target`")
    return TerminalFunctional.log_mixture(mixture_from_model(model.target))


def policy_from_model(model: PolicyModel, dim: int, bins: int = 1) -> PolicyParams:
    kind = PolicyKind(model.kind)
    if kind is PolicyKind.CONSTANT:
        return PolicyParams.constant(model.c) if model.c is not None else PolicyParams.zeros(kind, dim)
    if model.slopes is not None and model.offsets is not None:
        return PolicyParams.affine(model.slopes, model.offsets)
    return PolicyParams.zeros(kind, dim, bins)


def factors_from_models(models: list[FactorModel]) -> list[GaussianFactor]:
    return [GaussianFactor.build(model.a, model.q) for model in models]


def _measure_error_path(prefix: str, error: ValueError) -> str:
    component = getattr(error, "component", None)
    if component is not None:
        return f"{prefix}.components[{component}]"
    return prefix


def _semantic_errors(config: RunConfig) -> list[SchemaError]:
    errors: list[SchemaError] = []

    for name in REQUIRED_BLOCKS[config.command]:
        if getattr(config, name) is None:
            errors.append(SchemaError(path=f"$.{name}", message=f"required by command {config.command!r}"))
    if config.command == "bl" and config.target is None and not config.functions:
        errors.append(SchemaError(path="$.target", message="bl needs `target` or `functions`"))

    def check_mixture(prefix: str, model: Optional[MixtureModel]) -> None:
        if model is None:
            return
        try:
            mixture_from_model(model)
        except ValueError as error:
            errors.append(SchemaError(path=_measure_error_path(prefix, error), message=str(error)))

    check_mixture("$.target", config.target)
    check_mixture("$.eta", config.eta)
    check_mixture("$.xi", config.xi)
    for index, model in enumerate(config.targets or []):
        check_mixture(f"$.targets[{index}]", model)

    if config.frame is not None:
        try:
            frame_from_model(config.frame)
        except ValueError as error:
            errors.append(SchemaError(path="$.frame", message=str(error)))

    if config.functional is not None:
        try:
            functional_from_model(config.functional)
        except MeasureError as error:
            errors.append(
                SchemaError(path=_measure_error_path("$.functional.target", error), message=str(error))
            )
        except ValueError as error:
            errors.append(SchemaError(path="$.functional", message=str(error)))

    if config.policy is not None and config.policy.slopes is not None:
        try:
            policy_from_model(config.policy, len(config.policy.offsets or []))
        except ValueError as error:
            errors.append(SchemaError(path="$.policy", message=str(error)))

    for index, model in enumerate(config.functions or []):
        try:
            GaussianFactor.build(model.a, model.q)
        except ValueError as error:
            errors.append(SchemaError(path=f"$.functions[{index}]", message=str(error)))
    return errors


def parse_config(document: Any) -> RunConfig:
    """Validate a run document, collecting every violation before failing."""
    if not isinstance(document, dict):
        raise ConfigError([SchemaError(path="$", message="a run document must be a JSON object")])
    try:
        config = RunConfig.model_validate(document)
    except ValidationError as error:
        raise ConfigError(_schema_errors(error)) from error
    errors = _semantic_errors(config)
    if errors:
        raise ConfigError(errors)
    return config


def load_config(path: str | Path) -> RunConfig:
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as error:
        raise ConfigError([SchemaError(path="$", message=f"invalid JSON: {error}")]) from error
    return parse_config(document)


def apply_overrides(
    config: RunConfig,
    *,
    seed: Optional[int] = None,
    paths: Optional[int] = None,
    steps: Optional[int] = None,
    out: Optional[str] = None,
    dump_paths: bool = False,
) -> RunConfig:
    """Command-line flags win over document fields."""
    update: dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    if paths is not None or steps is not None:
        update["sde"] = config.sde.model_copy(
            update={
                key: value
                for key, value in (("n_paths", paths), ("n_steps", steps))
                if value is not None
            }
        )
    if out is not None:
        update["output"] = out
    if dump_paths:
        update["dump_paths"] = True
    if not update:
        return config
    return parse_config({**config.model_dump(exclude_none=True), **_dump(update)})


def _dump(update: dict[str, Any]) -> dict[str, Any]:
    return {
        key: value.model_dump(exclude_none=True) if isinstance(value, BaseModel) else value
        for key, value in update.items()
    }
