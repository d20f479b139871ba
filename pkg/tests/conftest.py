import numpy as np
import pytest

from locoskills import toyenv
from locoskills.config import RunConfig

TINY = {
    "low": {
        "epochs": 4,
        "encoder_hidden": [16],
        "encoder_batch": 64,
        "diversity_batch": 16,
        "checkpoint_every": 2,
        "ppo": {"n_envs": 8, "rollout_steps": 16, "minibatch": 64, "hidden": [16]},
        "disc": {"hidden": [16], "batch": 32, "passes": 1},
    },
    "high": {
        "epochs": 3,
        "eval_every": 3,
        "eval_episodes": 4,
        "checkpoint_every": 2,
        "ppo": {"n_envs": 8, "rollout_steps": 8, "minibatch": 32, "hidden": [16]},
    },
    "eval_episodes": 4,
}


def tiny_config(**low_overrides) -> RunConfig:
    d = {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY.items()}
    low = {k: (dict(v) if isinstance(v, dict) else v) for k, v in TINY["low"].items()}
    for key, value in low_overrides.items():
        if isinstance(value, dict):
            low[key] = {**low.get(key, {}), **value}
        else:
            low[key] = value
    d["low"] = low
    return RunConfig.from_dict(d)


@pytest.fixture(scope="session")
def small_dataset():
    return toyenv.generate_dataset(np.random.default_rng(0), 6, 2)


_ACCEPTANCE = {}


@pytest.fixture
def record_criterion():
    """Store a criterion outcome for the end-of-session summary."""

    def record(number, passed, detail):
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")
