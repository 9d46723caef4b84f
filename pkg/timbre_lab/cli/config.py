"""
Configuration loading.

Sources, lowest to highest precedence:

1. dataclass defaults
2. JSON config file (``--config``), one object per section
3. environment: ``TIMBRELAB_SEEDS`` (comma list), ``TIMBRELAB_THREADS``,
   ``TIMBRELAB_OUT_DIR`` and ``TIMBRELAB__<section>__<key>=<json value>``
4. command-line flags (``--seed``, ``--threads``, ``--out-dir``)

Every key is checked against its dataclass field; unknown keys and wrong
types raise ConfigError naming the dotted key.
"""
import json
import os
import typing
from dataclasses import fields
from pathlib import Path

from timbre_lab.advconstraint import PerturbationConfig
from timbre_lab.audiofeat import DatasetSpec, MelConfig
from timbre_lab.errors import ConfigError, InvalidArgumentError
from timbre_lab.generator import GeneratorConfig
from timbre_lab.harness import ExperimentConfig
from timbre_lab.speakernet import TrainConfig
from timbre_lab.substitute import DistillConfig

ENV_PREFIX = "TIMBRELAB"

SECTIONS = {
    "dataset": DatasetSpec,
    "mel": MelConfig,
    "blackbox": TrainConfig,
    "whitebox": TrainConfig,
    "perturbation": PerturbationConfig,
    "generator": GeneratorConfig,
    "distill": DistillConfig,
}
EXPERIMENT_KEYS = ("seeds", "out_dir", "threads", "n_test_contents")


def _check_value(key, value, hint):
    """Validate one value against a field annotation; ints are accepted for floats."""
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        options = [h for h in typing.get_args(hint) if h is not type(None)]
        if value is None:
            return None
        return _check_value(key, value, options[0])
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(key, f"expected a string, got {value!r}")
        return value
    if hint is list or origin is list:
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(key, f"expected a list of integers, got {value!r}")
        return list(value)
    return value


def build_section(name, cls, values, base=None):
    """
    Instantiate one section dataclass from a dict of overrides.

    Raises:
        ConfigError: On unknown keys, wrong types or failed validation
    """
    if not isinstance(values, dict):
        raise ConfigError(name, f"expected an object, got {type(values).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {f.name: getattr(base, f.name) for f in fields(cls)} if base is not None else {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown key")
        kwargs[key] = _check_value(f"{name}.{key}", value, hints[key])
    try:
        section = cls(**kwargs)
        if hasattr(section, "validate"):
            section.validate()
    except InvalidArgumentError as e:
        raise ConfigError(name, str(e)) from e
    return section


def read_config_file(path):
    """Parse a JSON config file into a dict of sections."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(str(path), "config file not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"invalid JSON at line {e.lineno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ConfigError(str(path), "top level must be an object")
    return raw


def env_overrides(environ):
    """
    Collect overrides from the environment as a dict of sections.

    Returns:
        dict: Same shape as a config file
    """
    sections = {}
    experiment = sections.setdefault("experiment", {})
    if environ.get(f"{ENV_PREFIX}_SEEDS"):
        try:
            experiment["seeds"] = [int(s) for s in environ[f"{ENV_PREFIX}_SEEDS"].split(",") if s.strip()]
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}_SEEDS", "expected a comma-separated list of integers") from e
    if environ.get(f"{ENV_PREFIX}_THREADS"):
        try:
            experiment["threads"] = int(environ[f"{ENV_PREFIX}_THREADS"])
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}_THREADS", "expected an integer") from e
    if environ.get(f"{ENV_PREFIX}_OUT_DIR"):
        experiment["out_dir"] = environ[f"{ENV_PREFIX}_OUT_DIR"]

    prefix = f"{ENV_PREFIX}__"
    for name in sorted(environ):
        if not name.startswith(prefix):
            continue
        parts = name[len(prefix):].split("__")
        if len(parts) != 2:
            raise ConfigError(name, "expected TIMBRELAB__<section>__<key>")
        section, key = (p.lower() for p in parts)
        try:
            value = json.loads(environ[name])
        except json.JSONDecodeError:
            value = environ[name]
        sections.setdefault(section, {})[key] = value
    return sections


def _merge(target, overrides):
    for section, values in overrides.items():
        if not isinstance(values, dict):
            raise ConfigError(section, f"expected an object, got {type(values).__name__}")
        target.setdefault(section, {}).update(values)


def load_config(path=None, environ=None, seed=None, threads=None, out_dir=None):
    """
    Resolve an ExperimentConfig from defaults, file, environment and flags.

    Args:
        path: Optional JSON config file
        environ (dict): Defaults to ``os.environ``
        seed (int): ``--seed``; replaces the seed list with ``[seed]``
        threads (int): ``--threads``
        out_dir (str): ``--out-dir``

    Returns:
        ExperimentConfig: Validated

    Raises:
        ConfigError: Naming the offending dotted key
    """
    environ = os.environ if environ is None else environ
    merged = {}
    if path is not None:
        _merge(merged, read_config_file(path))
    _merge(merged, env_overrides(environ))
    flags = {"seeds": [seed] if seed is not None else None, "threads": threads, "out_dir": out_dir}
    _merge(merged, {"experiment": {k: v for k, v in flags.items() if v is not None}})

    defaults = ExperimentConfig()
    kwargs = {}
    for name, values in merged.items():
        if name == "experiment":
            continue
        if name not in SECTIONS:
            raise ConfigError(name, "unknown section")
        kwargs[name] = build_section(name, SECTIONS[name], values, base=getattr(defaults, name))

    hints = typing.get_type_hints(ExperimentConfig)
    for key, value in merged.get("experiment", {}).items():
        if key not in EXPERIMENT_KEYS:
            raise ConfigError(f"experiment.{key}", "unknown key")
        kwargs[key] = _check_value(f"experiment.{key}", value, hints[key])

    cfg = ExperimentConfig(**kwargs)
    if "mel" not in merged:
        cfg.mel = MelConfig(sample_rate=cfg.dataset.sample_rate, fmax=cfg.dataset.sample_rate / 2)
    try:
        cfg.validate()
    except InvalidArgumentError as e:
        raise ConfigError("experiment", str(e)) from e
    return cfg
