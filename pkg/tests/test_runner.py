import json

import pytest

from app import runner
from app.config import parse_config
from app.report import exit_code, without_timing
from app.settings import EngineSettings
from scaffolding.templates import CANONICAL_SUITE, STANDARD_1D, SHIFTED_2D, get_starter_config


SMALL = EngineSettings(n_steps=32, n_paths=1000)


def document(command, **fields):
    return {"command": command, "seed": 42, "sde": {"n_steps": 32, "n_paths": 1000}, **fields}


def test_entropy_of_standard_gaussian_is_zero():
    report = runner.run(parse_config(document("entropy", target=STANDARD_1D)), SMALL)

    entropy = report["results"]["entropy"]
    assert report["status"] == "ok"
    assert entropy["energy_estimate"]["value"] == 0.0
    assert report["verdicts"][0]["name"] == "entropy_representation"
    assert report["verdicts"][0]["verdict"] == "WithinNoise"
    assert [entry["name"] for entry in report["verdicts"]] == [
        "entropy_representation",
        "martingale_flatness",
        "terminal_law",
    ]
    assert report["verdicts"][1]["lhs"]["value"] == 1.0


def test_drift_scale_hook_is_flagged():
    config = parse_config(document("entropy", target=SHIFTED_2D, hooks={"drift_scale": 2.0}))

    report = runner.run(config, SMALL)

    assert report["status"] == "violation"
    assert exit_code(report) == 2
    assert report["results"]["entropy"]["energy_estimate"]["value"] == pytest.approx(2.0)


def test_reports_do_not_depend_on_worker_count():
    config = parse_config(
        document("entropy", target=get_starter_config("talagrand")["target"])
    )

    serial = runner.run(config, EngineSettings(workers=1, chunk_size=128))
    threaded = runner.run(config, EngineSettings(workers=3, chunk_size=128))

    assert without_timing(serial) == without_timing(threaded)


def test_handler_failure_becomes_error_report(monkeypatch, tmp_path):
    def boom(config, settings):
        raise RuntimeError("solver diverged")

    monkeypatch.setitem(runner.HANDLERS, "lsi", boom)
    output = tmp_path / "report.json"
    config = parse_config(document("lsi", target=STANDARD_1D, output=str(output)))

    report = runner.run(config, SMALL)

    assert report["status"] == "error"
    assert report["error"] == "RuntimeError: solver diverged"
    assert json.loads(output.read_text())["status"] == "error"


def test_laplace_lower_bound_holds():
    config = parse_config(
        document("laplace", functional={"kind": "Linear", "a": [1.0, 0.0]})
    )

    report = runner.run(config, SMALL)

    assert report["status"] == "ok"
    assert report["results"]["policy"]["kind"] == "ConstantDrift"
    assert report["results"]["exact_log_laplace"] == pytest.approx(0.5)
    assert report["verdicts"][0]["verdict"] == "HoldsWithMargin"


def test_optimize_writes_trace(tmp_path):
    trace = tmp_path / "trace.csv"
    config = parse_config(
        document(
            "optimize",
            functional={"kind": "Linear", "a": [1.0, 0.0]},
            policy={"kind": "ConstantDrift"},
            optimizer={"iterations": 5, "step_size": 0.5, "batch": 100, "bins": 1},
            trace_path=str(trace),
        )
    )

    report = runner.run(config, SMALL)

    assert report["status"] in ("ok", "violation")
    assert len(report["results"]["optimization"]["trace"]) == 5
    assert trace.read_text().startswith("iteration,objective,std_error")


def test_optimize_reports_recovery_of_the_optimal_drift():
    config = parse_config(
        document(
            "optimize",
            functional={"kind": "Linear", "a": [1.0, 0.0]},
            policy={"kind": "ConstantDrift"},
            optimizer={"iterations": 20, "step_size": 0.5, "batch": 500, "bins": 1},
        )
    )

    report = runner.run(config, SMALL)

    verdicts = {entry["name"]: entry for entry in report["verdicts"]}
    assert set(verdicts) == {"boue_dupuis_lower_bound", "optimum_recovery", "optimal_drift_recovery"}
    assert verdicts["optimal_drift_recovery"]["verdict"] == "HoldsWithMargin"
    assert verdicts["optimal_drift_recovery"]["details"]["target"] == [1.0, 0.0]


def test_optimize_without_constant_optimum_skips_recovery():
    config = parse_config(
        document(
            "optimize",
            functional={"kind": "Quadratic", "q": [[0.25]]},
            policy={"kind": "ConstantDrift"},
            optimizer={"iterations": 2, "step_size": 0.5, "batch": 100, "bins": 1},
        )
    )

    report = runner.run(config, SMALL)

    assert [entry["name"] for entry in report["verdicts"]] == ["boue_dupuis_lower_bound"]


def test_bl_on_mercedes_frame():
    config = parse_config(get_starter_config("bl"))
    config = config.model_copy(update={"mc_samples": 4000})

    report = runner.run(config, SMALL)

    assert report["status"] == "ok"
    assert [entry["name"] for entry in report["verdicts"]] == [
        "brascamp_lieb_superadditivity",
        "brascamp_lieb_functional",
    ]
    assert report["results"]["frame_diagnostics"]["frame_error"] <= 1e-10


def test_reversed_bl_flags_scaled_drifts():
    starter = get_starter_config("rbl")
    config = parse_config(
        document(
            "rbl", frame=starter["frame"], targets=starter["targets"], hooks={"drift_scale": 3.0}
        )
    )

    report = runner.run(config, SMALL)

    assert report["status"] == "violation"


def test_dump_paths_next_to_report(tmp_path):
    output = tmp_path / "report.json"
    config = parse_config(
        document(
            "entropy",
            target=SHIFTED_2D,
            sde={"n_steps": 4, "n_paths": 3},
            output=str(output),
            dump_paths=True,
        )
    )

    report = runner.run(config, SMALL)

    dump = tmp_path / "report.paths.csv"
    assert report["results"]["path_dump"] == str(dump)
    assert len(dump.read_text().splitlines()) == 1 + 3 * 5


def test_verify_all_runs_every_case():
    config = parse_config(document("verify-all", sde={"n_steps": 32, "n_paths": 1000}))

    report = runner.run(config, SMALL)

    assert report["status"] in ("ok", "violation")
    assert [case["name"] for case in report["results"]["cases"]] == [
        case["name"] for case in CANONICAL_SUITE
    ]
    cases = {entry["details"]["case"] for entry in report["verdicts"]}
    assert {
        "energy-bound-affine",
        "epi-coupling",
        "entropy-standard",
        "optimize-log-mixture",
        "girsanov-reweighting",
        "random-policy-lower-bounds",
        "pathwise-gradient",
        "heat-gradient",
        "clark-ocone-bridge",
    } <= cases
    names = {entry["name"] for entry in report["verdicts"]}
    assert {"martingale_flatness", "terminal_law", "optimal_drift_recovery"} <= names
    policy_checks = [
        entry for entry in report["verdicts"] if entry["name"] == "random_policy_lower_bound"
    ]
    assert len(policy_checks) == 50
    assert all(entry["details"]["case"] for entry in report["verdicts"])
