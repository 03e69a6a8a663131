import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
import typing
from dataclasses import fields
from pathlib import Path

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

ENV_PREFIX = "UAVSYNTH_"
CONFIG_ENV = "UAVSYNTH_CONFIG"
TRUE_STRINGS = {"1", "true", "yes", "on"}
FALSE_STRINGS = {"0", "false", "no", "off"}


class ConfigManager:
    """
    Flat TOML key/value settings with environment and command-line overrides.

    Precedence, lowest first: dataclass defaults, the TOML file, environment
    variables named UAVSYNTH_<KEY>, explicit overrides passed to build().
    """

    def __init__(self, path=None, environ=None):
        self.environ = os.environ if environ is None else environ
        self.path = path or self.environ.get(CONFIG_ENV)
        self.values = {}
        self.load_config()

    def load_config(self):
        if not self.path:
            return
        path = Path(self.path)
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, "rb") as f:
                data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"Error parsing {path}: {e}") from e

        nested = [key for key, value in data.items() if isinstance(value, dict)]
        if nested:
            raise ConfigError(f"{path}: config must be flat key = value pairs, found tables {nested}")
        self.values = data
        logger.debug("Loaded %d settings from %s", len(data), path)

    def get(self, key, default=None):
        env_value = self.environ.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            return env_value
        return self.values.get(key, default)

    def build(self, cls, overrides=None, strict=True):
        """
        Instantiate a config dataclass

        Args:
            cls: Frozen config dataclass such as GenConfig or TrainConfig
            overrides: Mapping of explicit values; None entries are ignored
            strict: Reject file keys that cls does not define

        Returns:
            cls instance
        """
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(self.values) - set(known))
        if strict and unknown:
            raise ConfigError(f"Unknown config key(s) for {cls.__name__}: {', '.join(unknown)}")

        kwargs = {}
        for name, spec in known.items():
            raw = self.get(name)
            if overrides and overrides.get(name) is not None:
                raw = overrides[name]
            if raw is None:
                continue
            kwargs[name] = coerce(name, raw, spec.type)

        try:
            return cls(**kwargs)
        except ValueError as e:
            raise ConfigError(f"Invalid {cls.__name__}: {e}") from e


def coerce(name, value, annotation):
    """Convert a TOML or environment value to the annotated field type"""
    if typing.get_origin(annotation) is typing.Union:
        candidates = [arg for arg in typing.get_args(annotation) if arg is not type(None)]
        annotation = candidates[0]
    try:
        if annotation is bool:
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in TRUE_STRINGS:
                return True
            if text in FALSE_STRINGS:
                return False
            raise ValueError(f"not a boolean: {value!r}")
        if annotation is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"not an integer: {value!r}")
            return int(value)
        if annotation is float:
            return float(value)
        if annotation is str:
            return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Config key '{name}': {e}") from e
    return value
