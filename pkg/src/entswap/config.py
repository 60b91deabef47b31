"""YAML run configuration: parsing, validation, presets and emission.

A configuration file is a YAML mapping validated against
``schemas/config.schema.json``.  Missing keys take the defaults of
:class:`~entswap.experiments.ExperimentConfig`.  A ``preset`` key (or the
``--preset`` flag) supplies a base layer that explicit keys override.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import yaml

from .detection import REP_RATE, DetectorParams, dark_prob_from_rate
from .errors import ConfigurationError, ValidationError
from .experiments import ExperimentConfig
from .spdc import FilterSpec, SourceParams

ALL_ARMS = ("ch1", "ch2", "ch3", "ch4")

# filter layouts; purity_after equals the measured net HOM visibility of each layout
NO_FILTER_PURITY = 0.784
TWO_FILTERS = {"arms": ["ch1", "ch4"], "transmission": 0.77, "purity_after": 0.851}
FOUR_FILTERS = {"arms": list(ALL_ARMS), "transmission": 0.77, "purity_after": 0.872}

DEFAULT_THETAS = {
    "source_test": (0.0, 90.0, 90.0, 0.0),
    "hom": (0.0, 90.0, 90.0, 0.0),
    "teleport": (None, 90.0, 90.0, None),
    "swap": (None, 0.0, 0.0, None),
}

TABLE1_PAIRS = [[0, 0], [0, 90], [90, 0], [90, 90], [45, 45], [45, 135], [135, 45], [135, 135]]


def _both(**source):
    return {"I": dict(source), "II": dict(source)}


PRESETS: dict[str, dict] = {
    "fig2": {"setup": "source_test", "source": "I", "sources": {"I": {"mu": 0.1}, "II": {"mu": 0.106}}},
    "fig3a": {
        "setup": "hom",
        "thetas": [0, 90, 90, 0],
        "sources": _both(purity=NO_FILTER_PURITY),
    },
    "fig3b": {"setup": "hom", "thetas": [0, 90, 90, 0], "sources": _both(filter=TWO_FILTERS)},
    "fig3c": {"setup": "hom", "thetas": [0, 90, 90, 0], "sources": _both(filter=FOUR_FILTERS)},
    "fig4": {
        "setup": "teleport",
        "thetas": [None, 90, 90, None],
        "angle_pairs": [[90, 90], [90, 0], [45, 45], [45, 135]],
        "sources": _both(filter=FOUR_FILTERS),
    },
    "fig5a": {
        "setup": "swap",
        "thetas": [None, 0, 0, None],
        "sources": {"I": {"mu": 0.1, "filter": FOUR_FILTERS}, "II": {"mu": 0.106, "filter": FOUR_FILTERS}},
    },
    "fig5b": {
        "setup": "swap",
        "thetas": [None, 0, 0, None],
        "sources": {"I": {"mu": 0.05, "filter": FOUR_FILTERS}, "II": {"mu": 0.053, "filter": FOUR_FILTERS}},
    },
    "table1": {
        "setup": "teleport",
        "thetas": [None, 90, 90, None],
        "angle_pairs": TABLE1_PAIRS,
        "sources": _both(filter=FOUR_FILTERS),
    },
}

CONSTRAINT_WORDS = {
    "minimum": "≥ {}",
    "maximum": "≤ {}",
    "exclusiveMinimum": "> {}",
    "exclusiveMaximum": "< {}",
    "type": "of type {}",
    "enum": "one of {}",
    "minItems": "at least {} items long",
    "maxItems": "at most {} items long",
}


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("entswap").joinpath("schemas", name).read_text(encoding="utf-8")
    return json.loads(text)


def _describe(error: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in error.absolute_path) or "<root>"
    if error.validator == "additionalProperties":
        extra = sorted(set(error.instance) - set(error.schema.get("properties", {})))
        where = f" in {path}" if error.absolute_path else ""
        return f"unknown key {', '.join(map(repr, extra))}{where}"
    template = CONSTRAINT_WORDS.get(error.validator)
    if template is None:
        return f"{path}: {error.message}"
    return f"{path}: must be {template.format(error.validator_value)} (got {error.instance!r})"


def _deepest(error: jsonschema.ValidationError) -> jsonschema.ValidationError:
    # oneOf failures: report the branch that got furthest into the document
    while error.context:
        error = max(error.context, key=lambda e: len(e.absolute_path))
    return error


def validate_mapping(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(load_schema("config.schema.json"))
    errors = sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = _deepest(errors[0])
        msg = _describe(err)
        if err.validator == "additionalProperties":
            raise ConfigurationError(msg)
        raise ValidationError(msg)


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _source(data: dict, where: str) -> SourceParams:
    kwargs = dict(data)
    if "transmission" in kwargs:
        kwargs["transmission"] = tuple(float(t) for t in kwargs["transmission"])
    if kwargs.get("filter") is not None:
        f = dict(kwargs["filter"])
        if "arms" in f:
            f["arms"] = tuple(f["arms"])
        kwargs["filter"] = FilterSpec(**f)
    try:
        return SourceParams(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _detector(data: dict, rep_rate: float, where: str) -> DetectorParams:
    kwargs = dict(data)
    if "dark_rate_cps" in kwargs:
        if "dark_prob" in kwargs:
            raise ValidationError(f"{where}: give dark_prob or dark_rate_cps, not both")
        kwargs["dark_prob"] = dark_prob_from_rate(kwargs.pop("dark_rate_cps"), rep_rate)
    try:
        return DetectorParams(**kwargs)
    except ValidationError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _angles(values):
    return tuple(None if v is None else float(v) for v in values)


def config_from_mapping(data: Optional[dict], preset: Optional[str] = None) -> ExperimentConfig:
    """Validate a mapping (as loaded from YAML) and build the config."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ValidationError("configuration must be a mapping")
    validate_mapping(data)
    explicit_mu = {n for n, s in (data.get("sources") or {}).items() if "mu" in s}
    name = preset or data.get("preset")
    if preset and data.get("preset") not in (None, preset):
        raise ValidationError(f"preset: file says {data['preset']!r} but {preset!r} was requested")
    if name is not None:
        if name not in PRESETS:
            raise ValidationError(f"preset: must be one of {sorted(PRESETS)} (got {name!r})")
        data = _merge(PRESETS[name], data)
    data = copy.deepcopy({k: v for k, v in data.items() if k != "preset"})
    if "thetas" not in data:
        data["thetas"] = list(DEFAULT_THETAS[data.get("setup", "hom")])
    if "mu" in data:
        # shorthand for both sources; an explicit per-source mu wins
        mu = data.pop("mu")
        sources = data.setdefault("sources", {})
        for n in ("I", "II"):
            if n not in explicit_mu:
                sources[n] = dict(sources.get(n, {}), mu=mu)

    rep_rate = float(data.get("rep_rate", REP_RATE))
    kwargs: dict = {}
    for key, value in data.items():
        if key == "sources":
            kwargs["sources"] = tuple(_source(value.get(n, {}), f"sources.{n}") for n in ("I", "II"))
        elif key == "detectors":
            items = value if isinstance(value, list) else [value] * 4
            kwargs["detectors"] = tuple(_detector(d, rep_rate, f"detectors.{i}") for i, d in enumerate(items))
        elif key == "thetas":
            kwargs["thetas"] = _angles(value)
        elif key in ("fixed_angles", "sweep_angles", "delays"):
            kwargs[key] = tuple(float(v) for v in value)
        elif key == "angle_pairs":
            kwargs[key] = tuple((float(a), float(b)) for a, b in value)
        elif key in ("rep_rate", "fwhm_nm", "center_nm", "fbs_ratio"):
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    if "n_max" in kwargs and kwargs["n_max"] is not None and "n_pulses" not in kwargs:
        kwargs["n_pulses"] = None
    try:
        return ExperimentConfig(**kwargs)
    except ValidationError:
        raise
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def parse_config(path=None, preset: Optional[str] = None) -> ExperimentConfig:
    """Read a YAML configuration file (``None`` = defaults only)."""
    if path is None:
        return config_from_mapping({}, preset)
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"configuration file {str(path)!r} does not exist")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: not valid YAML ({exc})") from None
    return config_from_mapping(data, preset)


def config_to_mapping(config: ExperimentConfig) -> dict:
    """Fully explicit mapping; ``config_from_mapping`` inverts it exactly."""
    out: dict = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name == "sources":
            out["sources"] = {}
            for name, src in zip(("I", "II"), value):
                d = asdict(src)
                d["transmission"] = list(src.transmission)
                if src.filter is not None:
                    d["filter"]["arms"] = list(src.filter.arms)
                out["sources"][name] = d
        elif f.name == "detectors":
            out["detectors"] = [asdict(d) for d in value]
        elif f.name == "angle_pairs":
            out[f.name] = [list(p) for p in value]
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def emit_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_mapping(config), sort_keys=True)
