"""Run configuration: defaults, JSON file, environment, and flag overrides.

Precedence, lowest first: built-in defaults, GLYCO_SEED environment variable,
JSON config file, command-line flags. The resolved configuration is embedded
in every emitted report so results are self-describing.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    seed: int = 42
    k_folds: int = 5
    window_total: int = 144
    window_input: int = 132
    max_gap_s: int = 900
    train_step: int = 1
    test_step: int = 1
    hypo_mgdl: float = 70.0
    hyper_mgdl: float = 280.0
    cohort: str = "all"
    lstm_hidden: int = 8
    lstm_layers: int = 3
    lstm_epochs: int = 20
    lstm_batch: int = 128
    lstm_lr: float = 0.001
    lstm_clip_norm: float | None = 5.0
    lstm_feedback: str = "recursive"
    lstm_heuristic_n: int = 1000
    hmm_states: int = 100
    hmm_max_iter: int = 10000
    gmm_k: int = 3
    gmm_n_init: int = 20
    gmm_max_iter: int = 200
    cluster_features: str = "hba1c,annual_income_usd"
    jobs: int = 1

    @property
    def horizon(self) -> int:
        return self.window_total - self.window_input

    def validate(self) -> None:
        if self.window_input >= self.window_total:
            raise ConfigError(
                f"window_input ({self.window_input}) must be below window_total "
                f"({self.window_total})"
            )
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        for name in ("train_step", "test_step", "jobs", "lstm_epochs", "lstm_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lstm_feedback not in ("recursive", "teacher"):
            raise ConfigError(f"lstm_feedback must be recursive or teacher")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_config(config_path: str | None, overrides: dict) -> RunConfig:
    """Merge sources into a validated RunConfig; unknown keys are errors."""
    values: dict = {}
    env_seed = os.environ.get("GLYCO_SEED")
    if env_seed is not None:
        try:
            values["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"GLYCO_SEED must be an integer, got {env_seed!r}")
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}")
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(loaded)
    values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    config = RunConfig(**values)
    config.validate()
    return config
