"""Strict JSON configuration for the command-line front end.

The schema is versioned and closed: a top-level ``"schema": 1`` is required
and unknown keys anywhere are rejected, because a silently ignored typo in
an experiment file is the main reproducibility hazard.  Overrides
(``key.path=value``) are merged into the raw document before validation.
"""

from __future__ import annotations

import json

import numpy as np

from .dist import make_distribution
from .errors import AsymlabError, ConfigInvalid
from .instances import (
    GmmInstance,
    Instance,
    IvInstance,
    instance_by_name,
    linear_iv_moment_model,
    overidentified_mean_model,
    resolve_score,
)
from .mc import ExperimentConfig
from .models import IVModel
from .scores import ScoreFunction

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema",
    "instance",
    "score",
    "n",
    "reps",
    "alpha",
    "seed",
    "estimators",
    "tests",
    "theta_init",
}
_RUN_KEYS = ("n", "reps", "alpha", "seed", "estimators", "tests")


def load_raw(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a JSON object")
    return raw


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Merge ``dotted.path=value`` pairs into the raw document.

    Values parse as JSON when possible (numbers, lists, booleans), else as
    strings.  Happens before validation, so a bad override is caught by the
    same checks as a bad file.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigInvalid(f"override {item!r} is not of the form key=value")
        dotted, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return raw


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigInvalid(f"unknown fields {sorted(unknown)} in {where}")


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise ConfigInvalid(f"missing field {key!r} in {where}")
    return obj[key]


def validate_raw(raw: dict) -> dict:
    _check_keys(raw, _TOP_KEYS, "config")
    if _require(raw, "schema", "config") != SCHEMA_VERSION:
        raise ConfigInvalid(f"unsupported schema {raw.get('schema')!r}; expected {SCHEMA_VERSION}")
    _require(raw, "instance", "config")
    _require(raw, "score", "config")
    return raw


def build_instance(spec) -> Instance:
    if isinstance(spec, str):
        return instance_by_name(spec)
    if not isinstance(spec, dict):
        raise ConfigInvalid("instance must be a name or an object")
    kind = _require(spec, "kind", "instance")
    if kind == "gmm":
        _check_keys(spec, {"kind", "distribution", "model", "theta0"}, "instance")
        dist = _build_distribution(_require(spec, "distribution", "instance"))
        model = _build_moment_model(_require(spec, "model", "instance"))
        theta0 = np.asarray(_require(spec, "theta0", "instance"), dtype=float)
        return GmmInstance(name="custom", dist=dist, model=model, theta0=theta0)
    if kind == "iv":
        _check_keys(spec, {"kind", "distribution", "model"}, "instance")
        dist = _build_distribution(_require(spec, "distribution", "instance"))
        model_spec = _require(spec, "model", "instance")
        _check_keys(model_spec, {"beta0", "sigma0_sq", "dims"}, "instance.model")
        model = IVModel(
            beta0=np.asarray(_require(model_spec, "beta0", "instance.model"), dtype=float),
            sigma0_sq=float(_require(model_spec, "sigma0_sq", "instance.model")),
            dims=tuple(_require(model_spec, "dims", "instance.model")),
        )
        return IvInstance(name="custom", dist=dist, model=model)
    raise ConfigInvalid(f"unknown instance kind {kind!r}")


def _build_distribution(spec):
    if not isinstance(spec, dict):
        raise ConfigInvalid("distribution must be an object")
    _check_keys(spec, {"support", "probs"}, "distribution")
    try:
        return make_distribution(
            _require(spec, "support", "distribution"), _require(spec, "probs", "distribution")
        )
    except AsymlabError as exc:
        raise ConfigInvalid(f"bad distribution: {exc}") from None


def _build_moment_model(spec):
    if not isinstance(spec, dict):
        raise ConfigInvalid("model must be an object")
    name = _require(spec, "name", "instance.model")
    if name == "overidentified_mean":
        _check_keys(spec, {"name", "v"}, "instance.model")
        return overidentified_mean_model(float(_require(spec, "v", "instance.model")))
    if name == "linear_iv_moments":
        _check_keys(spec, {"name", "dims"}, "instance.model")
        return linear_iv_moment_model(tuple(_require(spec, "dims", "instance.model")))
    raise ConfigInvalid(f"unknown model {name!r}; catalog: overidentified_mean, linear_iv_moments")


def build_instance_and_score(raw: dict) -> tuple[Instance, ScoreFunction]:
    raw = validate_raw(raw)
    instance = build_instance(raw["instance"])
    score = resolve_score(instance, raw["score"])
    return instance, score


def build_experiment(raw: dict) -> ExperimentConfig:
    instance, score = build_instance_and_score(raw)
    for key in _RUN_KEYS:
        _require(raw, key, "config")
    estimators = raw["estimators"]
    tests = raw["tests"]
    if not isinstance(estimators, list) or not isinstance(tests, list):
        raise ConfigInvalid("estimators and tests must be arrays of names")
    theta_init = raw.get("theta_init")
    try:
        return ExperimentConfig(
            instance=instance,
            score=score,
            n=int(raw["n"]),
            reps=int(raw["reps"]),
            alpha=float(raw["alpha"]),
            master_seed=int(raw["seed"]),
            estimators=tuple(estimators),
            tests=tuple(tests),
            theta_init=None if theta_init is None else np.asarray(theta_init, dtype=float),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"bad experiment fields: {exc}") from None


def prediction_fields(raw: dict) -> tuple[list[str], list[str], float]:
    """(estimators, tests, alpha) for the prediction command."""
    for key in ("alpha", "estimators", "tests"):
        _require(raw, key, "config")
    return list(raw["estimators"]), list(raw["tests"]), float(raw["alpha"])
