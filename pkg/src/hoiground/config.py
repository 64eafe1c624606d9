"""Key = value run configuration (INI sections), strict about unknown keys."""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .detection import (
    DEFAULT_MAX_INSTANCES,
    DEFAULT_MIN_INSTANCES,
    DEFAULT_SCORE_THRESHOLD,
    DetectorConfig,
    LAMBDA_PRESETS,
)
from .errors import ConfigError
from .params import DEFAULT_GAMMA, DEFAULT_TAU_P

_SCHEMA: dict[str, dict[str, type]] = {
    "model": {"d_v": int, "d_t": int, "d_s": int, "d": int, "tau_p": float, "gamma": float},
    "detector": {
        "lambda": float,
        "score_threshold": float,
        "min_instances": int,
        "max_instances": int,
        "human_class_id": int,
    },
    "train": {
        "lr": float,
        "epochs": int,
        "batch_size": int,
        "focal_gamma": float,
        "focal_alpha": float,
    },
    "run": {"seed": int, "threads": int},
    "paths": {"data_dir": str, "checkpoint": str, "out_dir": str},
}


@dataclass
class RunConfig:
    d_v: int = 16
    d_t: int = 16
    d_s: int | None = None
    d: int | None = None
    tau_p: float = DEFAULT_TAU_P
    gamma: float = DEFAULT_GAMMA
    det_lambda: float = LAMBDA_PRESETS["hico-det"]
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    min_instances: int = DEFAULT_MIN_INSTANCES
    max_instances: int = DEFAULT_MAX_INSTANCES
    human_class_id: int = 0
    lr: float = 2e-4
    epochs: int = 5
    batch_size: int = 8
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    seed: int = 0
    threads: int = 1
    data_dir: str | None = None
    checkpoint: str | None = None
    out_dir: str | None = None

    def detector(self) -> DetectorConfig:
        return DetectorConfig(
            score_threshold=self.score_threshold,
            min_instances=self.min_instances,
            max_instances=self.max_instances,
            det_lambda=self.det_lambda,
            human_class_id=self.human_class_id,
        )

    def dims(self) -> dict[str, int]:
        dims = {"d_v": self.d_v, "d_t": self.d_t}
        if self.d_s is not None:
            dims["d_s"] = self.d_s
        if self.d is not None:
            dims["d"] = self.d
        return dims


_FIELD_BY_KEY = {
    ("detector", "lambda"): "det_lambda",
}


def load_config(path: str | Path | None) -> RunConfig:
    """Parse an INI config; unknown sections or keys are rejected outright."""
    config = RunConfig()
    if path is None:
        return config
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}]")
            caster = _SCHEMA[section][key]
            try:
                value = caster(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"config key [{section}] {key} = {raw!r} is not a valid {caster.__name__}"
                ) from exc
            setattr(config, _FIELD_BY_KEY.get((section, key), key), value)
    return config
