"""Flat key-value experiment configs with a strict schema.

The on-disk format is one ``section.key = value`` pair per line, ``#``
comments, and nothing nested deeper than the single dot.  Every key is
declared in ``SCHEMA`` below with its type and default; unknown keys,
duplicate keys, type mismatches, and out-of-choice values are all hard
errors so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config_text",
    "load_config",
    "format_config",
]


class ConfigError(ValueError):
    """A config file failed to parse or validate."""


_REQUIRED = object()


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "yes", "1"):
        return True
    if text.lower() in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_intlist(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


_PARSERS = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": str,
    "intlist": _parse_intlist,
}

# (type, default, choices); _REQUIRED marks keys without a fallback
SCHEMA: dict[str, tuple[str, Any, tuple | None]] = {
    "task": ("str", _REQUIRED, ("mri", "deblur", "sr", "inpaint")),
    "image.height": ("int", _REQUIRED, None),
    "image.width": ("int", _REQUIRED, None),
    "prior.kind": ("str", "stationary", ("stationary", "gmm")),
    "prior.seed": ("int", 0, None),
    "prior.amplitude": ("float", 2.0, None),
    "prior.knee": ("float", 0.05, None),
    "prior.power": ("float", 4.0, None),
    "prior.floor": ("float", 1e-4, None),
    "prior.mean_scale": ("float", 0.0, None),
    "prior.components": ("int", 3, None),
    "prior.variance": ("float", 0.01, None),
    "mask.kind": ("str", "random", ("random", "equispaced")),
    "mask.accel": ("int", 4, None),
    "mask.calib": ("int", 4, None),
    "blur.size": ("int", 3, None),
    "blur.variance": ("float", 25.0, None),
    "sr.factor": ("int", 2, None),
    "inpaint.fraction": ("float", 0.25, None),
    "noise.eta_var": ("float", 0.005, None),
    "schedule.source": ("str", "explicit", ("explicit", "derived")),
    "schedule.sigma_min": ("float", 0.002, None),
    "schedule.sigma_max": ("float", 20.0, None),
    "schedule.tau_max": ("float", 0.1, None),
    "schedule.tau_min": ("float", 0.05, None),
    "schedule.rho": ("float", 7.0, None),
    "schedule.lf_cutoff": ("float", 0.1, None),
    "sampler.steps": ("int", 20, None),
    "sampler.lambda_mode": (
        "str",
        "invariant",
        ("invariant", "constant", "linear", "square", "square_root", "log", "optimal"),
    ),
    "sampler.lambda_hat": ("float", 1.0, None),
    "sampler.alpha_hat": ("float", 0.1, None),
    "sampler.alpha_decay": ("bool", False, None),
    "sampler.noise_instances": ("int", 1, None),
    "sampler.momentum": ("str", "none", None),
    "sampler.precondition": ("bool", False, None),
    "sampler.init": ("str", "adjoint", ("adjoint", "zero")),
    "metrics.peak": ("str", "gt-max", ("gt-max", "unit")),
    "run.seeds": ("intlist", (0,), None),
    "run.problems": ("int", 5, None),
    "run.out": ("str", "", None),
    "sweep.endpoint": ("str", "stop", ("start", "stop")),
    "sweep.intervals": ("int", 3, None),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Split config text into a raw ``key -> value-string`` mapping."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key.count(".") > 1:
            raise ConfigError(f"line {lineno}: {key!r} nests deeper than one level")
        if key in mapping:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        mapping[key] = value
    return mapping


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully validated experiment description.

    ``values`` maps every schema key to its typed value; the common ones
    are also exposed as attributes.
    """

    values: dict[str, Any] = field(repr=False)

    @property
    def task(self) -> str:
        return self.values["task"]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.values["image.height"], self.values["image.width"])

    @property
    def seeds(self) -> tuple[int, ...]:
        return self.values["run.seeds"]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def with_values(self, updates: dict[str, Any]) -> "ExperimentConfig":
        """A copy with typed values replaced; keys must exist in the schema."""
        unknown = sorted(set(updates) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        merged = dict(self.values)
        merged.update(updates)
        self._cross_validate(merged)
        return ExperimentConfig(values=merged)

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        unknown = sorted(set(mapping) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values: dict[str, Any] = {}
        for key, (kind, default, choices) in SCHEMA.items():
            if key in mapping:
                try:
                    value = _PARSERS[kind](mapping[key])
                except ValueError as exc:
                    raise ConfigError(f"{key}: {exc}") from exc
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {key!r}")
            else:
                value = default
            if choices is not None and value not in choices:
                raise ConfigError(
                    f"{key}: {value!r} is not one of {', '.join(choices)}"
                )
            values[key] = value
        cls._cross_validate(values)
        return cls(values=values)

    @staticmethod
    def _cross_validate(values: dict[str, Any]) -> None:
        if values["image.height"] < 1 or values["image.width"] < 1:
            raise ConfigError("image dimensions must be positive")
        if values["noise.eta_var"] < 0:
            raise ConfigError("noise.eta_var must be non-negative")
        if values["sampler.steps"] < 1:
            raise ConfigError("sampler.steps must be >= 1")
        if not values["run.seeds"]:
            raise ConfigError("run.seeds must list at least one seed")
        if values["schedule.source"] == "explicit":
            if not 0 < values["schedule.sigma_min"] < values["schedule.sigma_max"]:
                raise ConfigError("need 0 < schedule.sigma_min < schedule.sigma_max")
        mom = values["sampler.momentum"]
        if mom not in ("none", "optimal"):
            try:
                float(mom)
            except ValueError:
                raise ConfigError(
                    f"sampler.momentum must be a float, 'none', or 'optimal', got {mom!r}"
                ) from None


def load_config(path) -> ExperimentConfig:
    with open(path, "r") as fh:
        text = fh.read()
    try:
        return ExperimentConfig.from_mapping(parse_config_text(text))
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    """Render a config back to text, keys in schema order."""
    lines = [f"{key} = {_format_value(config.values[key])}" for key in SCHEMA]
    return "\n".join(lines) + "\n"
