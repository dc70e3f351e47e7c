"""Experiment configuration: flat `key = value` text files.

One pair per line, `#` starts a comment, lists are comma-separated.  The
format needs no parser beyond string splitting, so configs stay portable.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

DATASETS = ("idx-pair", "csv", "synthetic-blobs", "synthetic-teacher")
TASKS = ("classify", "autoencode")
ALGORITHMS = ("bp", "il", "seqil")
OPTIMIZERS = ("sgd", "adam", "mq")

# step-size grid commonly searched for the activity updates
EPSILON_GRID = (0.02, 0.05, 0.1, 0.3)


class ConfigError(ValueError):
    """A configuration file is unreadable or inconsistent."""


@dataclass
class ExperimentConfig:
    """Everything a training or diagnostic run needs.

    Defaults follow the desk-scale conventions used throughout the package:
    batch size 64, an MNIST-shaped 784-256-256-10 architecture, T = 3 for
    classifiers and T = 6 for autoencoders, activity step size 0.1, and the
    MQ constants alpha_min = 0.001, r = 1e-6, rho = 0.9999.
    """

    # data
    dataset: str = "synthetic-blobs"
    task: str = "classify"
    n_samples: int = 4000
    input_dim: int = 20
    classes: int = 10
    blob_spread: float = 0.15
    pixel_like: bool = False
    teacher_dims: tuple[int, ...] = ()
    csv_path: str = ""
    csv_test_path: str = ""
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""
    test_fraction: float = 0.2

    # model
    layer_dims: tuple[int, ...] = (784, 256, 256, 10)
    hidden_act: str = "relu"
    output_nl: str = "softmax"

    # algorithm
    algorithm: str = "seqil"
    optimizer: str = "mq"
    T: int = -1  # -1: task default (3 classify, 6 autoencode)
    epsilon: float = 0.1
    clamp: str = "full"
    clamp_gamma: float = 1.0
    alpha: tuple[float, ...] = (0.01,)
    alpha_min: float = 0.001
    mq_r: float = 1e-6
    rho: float = 0.9999
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    # run
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    out: str = "metrics.csv"
    pretrain_iterations: int = 1000

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.T == -1:
            self.T = 6 if self.task == "autoencode" else 3
        if self.T < 0:
            raise ConfigError("T must be >= 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if len(self.layer_dims) < 3:
            raise ConfigError("layer_dims needs at least three entries")

    @property
    def n_weights(self) -> int:
        return len(self.layer_dims) - 1

    def alphas(self) -> list[float]:
        """Per-matrix step sizes, broadcasting a single value."""
        if len(self.alpha) == 1:
            return [self.alpha[0]] * self.n_weights
        if len(self.alpha) != self.n_weights:
            raise ConfigError(
                f"alpha needs 1 or {self.n_weights} values, got {len(self.alpha)}"
            )
        return list(self.alpha)


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _convert(name: str, text: str, target_type) -> object:
    text = text.strip()
    if target_type is bool:
        try:
            return _BOOL_VALUES[text.lower()]
        except KeyError:
            raise ConfigError(f"{name}: expected a boolean, got {text!r}") from None
    if target_type is int:
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name}: expected an integer, got {text!r}") from None
    if target_type is float:
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name}: expected a number, got {text!r}") from None
    if target_type is str:
        return text
    # tuple-valued fields: comma-separated entries
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        if name in ("layer_dims", "teacher_dims"):
            return tuple(int(p) for p in parts)
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{name}: expected a comma-separated list, got {text!r}") from None


def parse_config_text(text: str) -> ExperimentConfig:
    """Parse `key = value` lines into an ExperimentConfig."""
    field_types = {f.name: f.type for f in fields(ExperimentConfig)}
    type_map = {
        "str": str,
        "int": int,
        "float": float,
        "bool": bool,
        "tuple[int, ...]": tuple,
        "tuple[float, ...]": tuple,
    }
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in field_types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        target = type_map.get(str(field_types[key]), str)
        values[key] = _convert(key, value, target)
    try:
        return ExperimentConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def parse_config_file(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def write_config_file(cfg: ExperimentConfig, path) -> None:
    """Serialize a config back to the flat text format."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ", ".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
