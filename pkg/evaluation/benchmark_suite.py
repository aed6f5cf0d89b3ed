"""
Defines the benchmark suite: the candidate systems, their parameterizations,
and the methods compared on each.

`get_suite()` turns a preset into the list of run configurations consumed by
`src.cli.run_suite` and `run_evaluation.py`.
"""

from src.config import Method, RunConfig

# (system, parameter overrides) per benchmark cell
BENCHMARK_SYSTEMS = [
    ("convection", {"beta": 30.0}),
    ("convection", {"beta": 40.0}),
    ("reaction", {"rho": 5.0}),
    ("reaction", {"rho": 7.0}),
    ("reaction-diffusion", {"d": 2.0, "rho": 5.0}),
    ("reaction-diffusion", {"d": 4.0, "rho": 5.0}),
    ("diffusion", {"d": 5.0}),
    ("diffusion", {"d": 10.0}),
]

PRESETS = {
    "benchmark": BENCHMARK_SYSTEMS,
    "reaction": [("reaction", {"rho": 5.0}), ("reaction", {"rho": 7.0})],
    "smoke": [("reaction", {"rho": 5.0}), ("convection", {"beta": 30.0})],
}

DEFAULT_METHODS = [Method.VANILLA, Method.ENSEMBLE_PL, Method.ENSEMBLE_NOPL, Method.BAYES_PL, Method.BAYES_NOPL]


def get_suite(preset: str = "benchmark", methods=None, **overrides) -> list[RunConfig]:
    """
    Returns one RunConfig per (system, parameterization, method) of the preset.
    `overrides` apply to every config (e.g. seed, desk_scale).
    """
    if preset not in PRESETS:
        raise ValueError(f"Unknown suite preset '{preset}'. Choose from: {', '.join(PRESETS)}")
    methods = [Method(m) for m in (methods or DEFAULT_METHODS)]
    configs = []
    for system, params in PRESETS[preset]:
        for method in methods:
            configs.append(RunConfig.from_mapping({
                "system": system, "method": method.value, **params, **overrides,
            }))
    return configs
