"""
Starter run documents for every command and the canonical verification suite.
"""
import copy
import math
from typing import Any, Dict, List


def gaussian_block(mean: List[float], cov: List[List[float]]) -> Dict[str, Any]:
    return {"dim": len(mean), "components": [{"weight": 1.0, "mean": mean, "cov": cov}]}


def gaussian_mixture_pair(mean: List[float]) -> Dict[str, Any]:
    """Equal-weight unit-covariance components at +mean and -mean."""
    identity = [[1.0 if row == col else 0.0 for col in range(len(mean))] for row in range(len(mean))]
    return {
        "dim": len(mean),
        "components": [
            {"weight": 0.5, "mean": list(mean), "cov": identity},
            {"weight": 0.5, "mean": [-value for value in mean], "cov": identity},
        ],
    }


STANDARD_1D = gaussian_block([0.0], [[1.0]])
SHIFTED_2D = gaussian_block([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
HALF_VARIANCE_2D = gaussian_block([0.0, 0.0], [[0.5, 0.0], [0.0, 0.5]])
SHIFTED_HALF_VARIANCE_2D = gaussian_block([1.0, 0.0], [[0.5, 0.0], [0.0, 0.5]])
ANISOTROPIC_2D = gaussian_block([0.0, 0.0], [[0.5, 0.0], [0.0, 2.0]])

SYMMETRIC_MIXTURE_2D = {
    "dim": 2,
    "components": [
        {"weight": 0.5, "mean": [2.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
        {"weight": 0.5, "mean": [-2.0, 0.0], "cov": [[1.0, 0.0], [0.0, 1.0]]},
    ],
}

BIMODAL_1D = {
    "dim": 1,
    "components": [
        {"weight": 0.5, "mean": [2.0], "cov": [[0.25]]},
        {"weight": 0.5, "mean": [-2.0], "cov": [[0.25]]},
    ],
}

EPI_THETAS = [math.pi / 8.0, math.pi / 4.0, 3.0 * math.pi / 8.0]


# Starter documents written by `drift-entropy init-config <command>`.
STARTER_CONFIGS: Dict[str, Dict[str, Any]] = {
    "entropy": {
        "command": "entropy",
        "target": SHIFTED_2D,
        "sde": {"n_steps": 512, "n_paths": 20000},
        "seed": 42,
    },
    "laplace": {
        "command": "laplace",
        "functional": {"kind": "Linear", "a": [1.0, 0.0]},
        "policy": {"kind": "ConstantDrift", "c": [0.0, 0.0]},
        "sde": {"n_steps": 128, "n_paths": 20000},
        "seed": 42,
    },
    "optimize": {
        "command": "optimize",
        "functional": {"kind": "Linear", "a": [1.0, 0.0]},
        "policy": {"kind": "ConstantDrift"},
        "optimizer": {"iterations": 40, "step_size": 0.5, "batch": 1000, "bins": 1},
        "sde": {"n_steps": 64, "n_paths": 20000},
        "seed": 42,
    },
    "talagrand": {
        "command": "talagrand",
        "target": SYMMETRIC_MIXTURE_2D,
        "sde": {"n_steps": 256, "n_paths": 20000},
        "seed": 42,
    },
    "lsi": {"command": "lsi", "target": SHIFTED_2D, "mc_samples": 20000, "seed": 42},
    "epi": {
        "command": "epi",
        "eta": BIMODAL_1D,
        "xi": STANDARD_1D,
        "thetas": EPI_THETAS,
        "mc_samples": 20000,
        "seed": 42,
    },
    "bl": {
        "command": "bl",
        "frame": {"preset": "mercedes_benz"},
        "target": SHIFTED_2D,
        "functions": [{"a": [0.0], "q": [[0.5]]}] * 3,
        "mc_samples": 20000,
        "seed": 42,
    },
    "rbl": {
        "command": "rbl",
        "frame": {"preset": "coordinate", "ambient_dim": 2},
        "targets": [gaussian_block([1.0], [[1.0]]), STANDARD_1D],
        "sde": {"n_steps": 256, "n_paths": 20000},
        "seed": 42,
    },
    "verify-all": {"command": "verify-all", "sde": {"n_steps": 512, "n_paths": 20000}, "seed": 42},
}


# Cases run by `verify-all`; seed and sde come from the verify-all document.
CANONICAL_SUITE: List[Dict[str, Any]] = [
    {"name": "entropy-standard", "command": "entropy", "target": STANDARD_1D},
    {"name": "entropy-shifted", "command": "entropy", "target": SHIFTED_2D},
    {"name": "entropy-half-variance", "command": "entropy", "target": HALF_VARIANCE_2D},
    {"name": "entropy-shifted-half-variance", "command": "entropy", "target": SHIFTED_HALF_VARIANCE_2D},
    {"name": "entropy-symmetric-mixture", "command": "entropy", "target": SYMMETRIC_MIXTURE_2D},
    {"name": "talagrand-shifted", "command": "talagrand", "target": SHIFTED_2D},
    {"name": "talagrand-mixture", "command": "talagrand", "target": SYMMETRIC_MIXTURE_2D},
    {"name": "lsi-shifted", "command": "lsi", "target": SHIFTED_2D},
    {"name": "lsi-half-variance", "command": "lsi", "target": gaussian_block([0.0], [[0.5]])},
    {
        "name": "epi-gaussian",
        "command": "epi",
        "eta": STANDARD_1D,
        "xi": STANDARD_1D,
        "thetas": EPI_THETAS,
    },
    {"name": "epi-bimodal", "command": "epi", "eta": BIMODAL_1D, "xi": STANDARD_1D, "thetas": EPI_THETAS},
    {
        "name": "bl-coordinate-anisotropic",
        "command": "bl",
        "frame": {"preset": "coordinate", "ambient_dim": 2},
        "target": ANISOTROPIC_2D,
        "functions": [{"a": [0.5], "q": [[0.0]]}, {"a": [-0.3], "q": [[0.0]]}],
    },
    {
        "name": "bl-coordinate-shifted",
        "command": "bl",
        "frame": {"preset": "coordinate", "ambient_dim": 2},
        "target": SHIFTED_2D,
    },
    {
        "name": "bl-mercedes-shifted",
        "command": "bl",
        "frame": {"preset": "mercedes_benz"},
        "target": SHIFTED_2D,
        "functions": [{"a": [0.0], "q": [[0.5]]}] * 3,
    },
    {
        "name": "bl-mercedes-anisotropic",
        "command": "bl",
        "frame": {"preset": "mercedes_benz"},
        "target": ANISOTROPIC_2D,
    },
    {
        "name": "rbl-coordinate",
        "command": "rbl",
        "frame": {"preset": "coordinate", "ambient_dim": 2},
        "targets": [gaussian_block([1.0], [[1.0]]), STANDARD_1D],
    },
    {
        "name": "rbl-mercedes",
        "command": "rbl",
        "frame": {"preset": "mercedes_benz"},
        "targets": [
            gaussian_block([0.5], [[0.8]]),
            gaussian_block([-0.3], [[1.5]]),
            gaussian_block([0.2], [[0.6]]),
        ],
    },
    {
        "name": "laplace-linear-zero-policy",
        "command": "laplace",
        "functional": {"kind": "Linear", "a": [1.0, 0.0]},
        "policy": {"kind": "ConstantDrift", "c": [0.0, 0.0]},
    },
    {
        "name": "optimize-linear",
        "command": "optimize",
        "functional": {"kind": "Linear", "a": [1.0, 0.0]},
        "policy": {"kind": "ConstantDrift"},
        "optimizer": {"iterations": 20, "step_size": 0.5, "batch": 500, "bins": 1},
    },
    {
        "name": "optimize-log-mixture",
        "command": "optimize",
        "functional": {"kind": "LogMixture", "target": SHIFTED_2D},
        "policy": {"kind": "AffineDrift"},
        "optimizer": {"iterations": 100, "step_size": 0.2, "batch": 1000, "bins": 4},
    },
]

# Checks without a command of their own, also run by `verify-all`.
ENERGY_BOUND_CASE = {
    "name": "energy-bound-affine",
    "slopes": [[[-0.4, 0.1], [0.1, 0.3]], [[0.2, 0.0], [0.0, -0.5]]],
    "offsets": [[0.5, -0.2], [0.0, 0.8]],
}
EPI_COUPLING_CASE = {
    "name": "epi-coupling",
    "eta": gaussian_block([1.0], [[0.5]]),
    "xi": gaussian_block([0.5], [[2.0]]),
    "theta": math.pi / 6.0,
}
GIRSANOV_CASE = {"name": "girsanov-reweighting", "shift": [1.0, 0.0]}
RANDOM_POLICY_CASE = {
    "name": "random-policy-lower-bounds",
    "count": 50,
    "bins": 2,
    "max_paths": 2000,
    "functionals": [
        {"kind": "Linear", "a": [1.0, 0.5]},
        {"kind": "Quadratic", "q": [[0.25, 0.0], [0.0, 0.25]]},
        {"kind": "LogMixture", "target": gaussian_mixture_pair([1.0, 0.0])},
    ],
}
PATHWISE_GRADIENT_CASE = {
    "name": "pathwise-gradient",
    "functional": {"kind": "Quadratic", "q": [[0.3, 0.1], [0.1, 0.2]]},
    "bins": 2,
    "n_steps": 8,
    "n_paths": 200,
}
HEAT_GRADIENT_CASE = {
    "name": "heat-gradient",
    "target": {
        "dim": 2,
        "components": [
            {"weight": 0.3, "mean": [1.0, -0.5], "cov": [[0.6, 0.2], [0.2, 0.9]]},
            {"weight": 0.7, "mean": [-1.0, 0.5], "cov": [[1.4, -0.3], [-0.3, 0.8]]},
        ],
    },
}
CLARK_OCONE_CASE = {"name": "clark-ocone-bridge", "target": gaussian_block([0.5], [[0.5]])}


def get_starter_config(command: str) -> Dict[str, Any]:
    """Return a fresh copy of the starter document for ``command``."""
    if command not in STARTER_CONFIGS:
        raise ValueError(
            f"Unknown command '{command}'. Supported: {', '.join(sorted(STARTER_CONFIGS))}"
        )
    return copy.deepcopy(STARTER_CONFIGS[command])


def canonical_suite() -> List[Dict[str, Any]]:
    return copy.deepcopy(CANONICAL_SUITE)
