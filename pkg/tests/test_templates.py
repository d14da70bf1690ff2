import pytest

from app.config import COMMANDS, FunctionalModel, functional_from_model, parse_config
from scaffolding.templates import (
    CANONICAL_SUITE,
    CLARK_OCONE_CASE,
    HEAT_GRADIENT_CASE,
    RANDOM_POLICY_CASE,
    STARTER_CONFIGS,
    canonical_suite,
    gaussian_mixture_pair,
    get_starter_config,
)
from tools.measure_core import MixtureSpec


def test_every_command_has_a_valid_starter():
    assert set(STARTER_CONFIGS) == set(COMMANDS)
    for command in COMMANDS:
        config = parse_config(get_starter_config(command))
        assert config.command == command


def test_starter_configs_are_copies():
    first = get_starter_config("entropy")
    first["target"]["components"][0]["mean"][0] = 99.0

    assert get_starter_config("entropy")["target"]["components"][0]["mean"][0] == 1.0


def test_unknown_starter_raises():
    with pytest.raises(ValueError, match="Unknown command"):
        get_starter_config("integrate")


def test_suite_names_are_unique():
    names = [case["name"] for case in CANONICAL_SUITE]

    assert len(names) == len(set(names))


def test_suite_cases_parse_once_seeded():
    for case in canonical_suite():
        case.pop("name")
        config = parse_config({**case, "seed": 5})
        assert config.command != "verify-all"


def test_cross_check_documents_build():
    functionals = [
        functional_from_model(FunctionalModel.model_validate(document))
        for document in RANDOM_POLICY_CASE["functionals"]
    ]
    pair = MixtureSpec.from_document(gaussian_mixture_pair([1.0, 0.0]))

    assert [functional.dim for functional in functionals] == [2, 2, 2]
    assert pair.n_components == 2
    assert MixtureSpec.from_document(HEAT_GRADIENT_CASE["target"]).dim == 2
    assert MixtureSpec.from_document(CLARK_OCONE_CASE["target"]).dim == 1
