"""Experiment configuration files.

One ``key = value`` pair per line; blank lines and lines starting with ``#``
are ignored. Every key must appear in :data:`SCHEMA`; unknown or repeated
keys are errors. Lists are comma separated, booleans are ``true``/``false``,
and ``none`` clears an optional value.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _bool(s):
    if s in ("true", "false"):
        return s == "true"
    raise ValueError(f"expected true or false, got {s!r}")


def _int_list(s):
    return [int(v) for v in s.split(",") if v.strip()] if s.strip() else []


def _choice(*options):
    def parse(s):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _opt_float(s):
    return None if s == "none" else float(s)


SCHEMA = {
    "version": int,
    "task": _choice("regression", "classification"),
    "model": _choice("kan", "fasterkan", "mlp", "linear"),
    "hidden": _int_list,
    "kan_grid_size": int,
    "kan_degree": int,
    "kan_grid_lo": float,
    "kan_grid_hi": float,
    "fk_grid_min": float,
    "fk_grid_max": float,
    "fk_num_grids": int,
    "fk_inv_denominator": float,
    "fk_layer_norm": _bool,
    "fk_bias": _bool,
    "mlp_activation": _choice("relu", "none"),
    "private": _bool,
    "epochs": int,
    "batch_size": int,
    "learning_rate": float,
    "clip_norm": float,
    "noise_multiplier": float,
    "delta": float,
    "weight_decay": float,
    "batch_clip": _opt_float,
    "sampling": _choice("poisson", "full"),
    "seed": int,
    "trials": int,
    "data": _choice("synthetic", "csv", "mnist"),
    "synthetic_n": int,
    "synthetic_d": int,
    "synthetic_noise": float,
    "synthetic_seed": int,
    "csv_path": str,
    "csv_target": str,
    "csv_header": _bool,
    "mnist_train_images": str,
    "mnist_train_labels": str,
    "mnist_test_images": str,
    "mnist_test_labels": str,
    "train_subset": int,
    "test_subset": int,
    "test_fraction": float,
    "standardize": _bool,
    "out_dir": str,
}

REQUIRED = ("version", "task", "model", "data")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str
    model: str
    data: str
    version: int = CONFIG_VERSION
    hidden: tuple = ()
    kan_grid_size: int = 2
    kan_degree: int = 2
    kan_grid_lo: float = -2.0
    kan_grid_hi: float = 2.0
    fk_grid_min: float = -1.2
    fk_grid_max: float = 0.2
    fk_num_grids: int = 2
    fk_inv_denominator: float = 0.5
    fk_layer_norm: bool = True
    fk_bias: bool = False
    mlp_activation: str = "relu"
    private: bool = False
    epochs: int = 1
    batch_size: int = 64
    learning_rate: float = 1e-3
    clip_norm: float = 1.0
    noise_multiplier: float = 1.0
    delta: float = 1e-5
    weight_decay: float = 0.0
    batch_clip: float | None = None
    sampling: str = "poisson"
    seed: int = 0
    trials: int = 1
    synthetic_n: int = 20000
    synthetic_d: int = 10
    synthetic_noise: float = 0.05
    synthetic_seed: int = 0
    csv_path: str = ""
    csv_target: str = ""
    csv_header: bool = True
    mnist_train_images: str = ""
    mnist_train_labels: str = ""
    mnist_test_images: str = ""
    mnist_test_labels: str = ""
    train_subset: int = 0
    test_subset: int = 0
    test_fraction: float = 0.2
    standardize: bool = True
    out_dir: str = "runs"

    def validate(self, check_paths=True) -> "ExperimentConfig":
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version} (expected {CONFIG_VERSION})")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden widths must be positive")
        if self.model == "linear" and self.hidden:
            raise ConfigError("a linear model has no hidden layers")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        if self.task == "classification" and self.data != "mnist":
            raise ConfigError("classification is supported on mnist data only")
        if self.task == "regression" and self.data == "mnist":
            raise ConfigError("mnist data requires task = classification")
        needed = {
            "csv": ("csv_path", "csv_target"),
            "mnist": ("mnist_train_images", "mnist_train_labels", "mnist_test_images", "mnist_test_labels"),
        }.get(self.data, ())
        for key in needed:
            value = getattr(self, key)
            if not value:
                raise ConfigError(f"data = {self.data} requires {key}")
            if check_paths and key != "csv_target" and not os.path.exists(value):
                raise ConfigError(f"{key}: file not found: {value}")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                s = "true" if v else "false"
            elif isinstance(v, tuple):
                s = ",".join(str(x) for x in v)
            elif v is None:
                s = "none"
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    def as_dict(self):
        return asdict(self)


def parse_config(text: str, check_paths=True, base_dir=None) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            parsed = SCHEMA[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if isinstance(parsed, list):
            parsed = tuple(parsed)
        values[key] = parsed
    missing = [k for k in REQUIRED if k not in values]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    if base_dir is not None:
        for key in ("csv_path", "mnist_train_images", "mnist_train_labels", "mnist_test_images", "mnist_test_labels"):
            if values.get(key) and not os.path.isabs(values[key]):
                values[key] = os.path.join(base_dir, values[key])
    return ExperimentConfig(**values).validate(check_paths=check_paths)


def load_config(path, check_paths=True) -> ExperimentConfig:
    with open(path) as f:
        return parse_config(f.read(), check_paths=check_paths, base_dir=os.path.dirname(os.path.abspath(path)))
