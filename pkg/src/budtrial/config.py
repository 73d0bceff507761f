"""Scenario files: JSON schema validation, invariant checks and conversion to ScenarioConfig.

Every diagnostic is prefixed with the slash-separated path of the offending
field, e.g. ``truth/1: probability 1.2 outside [0, 1]``.
"""
from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .biomarker import BiomarkerConfig
from .errors import BudError, ConfigError
from .harness import AnalysisSpec, ScenarioConfig
from .metrics import MetricSpec
from .policies import PolicySpec

BINARY_FAMILIES = ("multi-arm-controlled", "best-arm")


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("budtrial").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _path(parts) -> str:
    return "/".join(str(p) for p in parts) or "<root>"


def schema_errors(d) -> list:
    validator = Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(d), key=lambda e: [str(p) for p in e.absolute_path])
    out = []
    for e in errors:
        # oneOf failures are clearer when reported through the deepest sub-error
        best = e
        while best.context:
            best = min(best.context, key=lambda c: (-len(c.absolute_path), c.message))
        out.append(f"{_path(best.absolute_path)}: {best.message}")
    return out


def _check_prob(errors, value, path):
    if not 0.0 <= value <= 1.0:
        errors.append(f"{path}: probability {value} outside [0, 1]")


def invariant_errors(d: dict) -> list:
    """Family-specific checks the schema cannot express (run after the schema passes)."""
    errors = []
    family = d["family"]
    truth = d["truth"]
    designs = d["designs"]
    prior = d.get("prior")
    if family in BINARY_FAMILIES:
        if truth != "prior":
            if not isinstance(truth, list) or any(isinstance(v, list) for v in truth):
                errors.append("truth: expected one response rate per arm")
            else:
                for i, v in enumerate(truth):
                    _check_prob(errors, v, f"truth/{i}")
        if prior is not None and len(prior) != 2:
            errors.append("prior: binary arms need a Beta prior [alpha, beta]")
        metric = d.get("metric", {})
        n_arms = d.get("arms_if_drawn", 4) if truth == "prior" else len(truth)
        if family == "multi-arm-controlled" and metric.get("control", True) and n_arms < 2:
            errors.append("truth: a controlled design needs a control and at least one experimental arm")
    elif family == "normal":
        if not isinstance(truth, list) or any(isinstance(v, list) for v in truth):
            errors.append("truth: expected one mean per arm")
        elif len(d.get("outcome_var", [])) != len(truth):
            errors.append(f"outcome_var: expected {len(truth)} entries, one per arm")
    elif family == "co-primary":
        if not isinstance(truth, list) or not all(isinstance(v, list) for v in truth):
            errors.append("truth: expected four cell probabilities per arm")
        else:
            if len(truth) < 2:
                errors.append("truth: need a control and at least one experimental arm")
            for i, row in enumerate(truth):
                if len(row) != 4:
                    errors.append(f"truth/{i}: expected 4 cell probabilities, got {len(row)}")
                    continue
                for j, v in enumerate(row):
                    _check_prob(errors, v, f"truth/{i}/{j}")
                if abs(sum(row) - 1.0) > 1e-9:
                    errors.append(f"truth/{i}: cell probabilities sum to {sum(row)}, not 1")
        if prior is not None and len(prior) != 4:
            errors.append("prior: co-primary arms need a Dirichlet prior with 4 entries")
    elif family == "biomarker":
        errors.extend(_biomarker_errors(d))
    n_arms = _n_arms(d)
    for i, des in enumerate(designs):
        if des["kind"] == "OracleFixed":
            alloc = des.get("allocation", [])
            if n_arms is not None and len(alloc) != n_arms:
                errors.append(f"designs/{i}/allocation: expected {n_arms} entries, got {len(alloc)}")
            elif sum(alloc) != d["T"]:
                errors.append(f"designs/{i}/allocation: sums to {sum(alloc)}, T is {d['T']}")
    labels = [des.get("label", des["kind"]) for des in designs]
    dup = sorted({x for x in labels if labels.count(x) > 1})
    if dup:
        errors.append(f"designs: duplicate labels {dup}; give each design a distinct label")
    return errors


def _n_arms(d):
    if d["family"] == "biomarker":
        return d.get("biomarker", {}).get("n_arms", 4) + 1
    if d["truth"] == "prior":
        return d.get("arms_if_drawn", 4)
    return len(d["truth"]) if isinstance(d["truth"], list) else None


def _biomarker_errors(d: dict) -> list:
    errors = []
    if "biomarker" not in d:
        return ["biomarker: required for the biomarker family"]
    b = d["biomarker"]
    n_markers = b.get("n_markers", 4)
    n_arms = b.get("n_arms", 4)
    targets = b.get("targets", list(range(1, n_arms + 1)))
    if len(targets) != n_arms:
        errors.append(f"biomarker/targets: expected {n_arms} entries, got {len(targets)}")
    for i, t in enumerate(targets):
        if not 1 <= t <= n_markers:
            errors.append(f"biomarker/targets/{i}: marker {t} outside 1..{n_markers}")
    prev = b.get("prevalences", [0.5] * n_markers)
    if len(prev) != n_markers:
        errors.append(f"biomarker/prevalences: expected {n_markers} entries, got {len(prev)}")
    truth = d["truth"]
    if isinstance(truth, dict):
        for key, pair in truth.get("rates", {}).items():
            if not 1 <= int(key) <= n_arms:
                errors.append(f"truth/rates/{key}: arm outside 1..{n_arms}")
                continue
            for j, v in enumerate(pair):
                _check_prob(errors, v, f"truth/rates/{key}/{j}")
    elif isinstance(truth, list) and all(isinstance(r, list) for r in truth):
        if len(truth) != 1 << n_markers:
            errors.append(f"truth: expected {1 << n_markers} profile rows, got {len(truth)}")
        for i, row in enumerate(truth):
            if len(row) != n_arms + 1:
                errors.append(f"truth/{i}: expected {n_arms + 1} rates, got {len(row)}")
            for j, v in enumerate(row):
                _check_prob(errors, v, f"truth/{i}/{j}")
    else:
        errors.append("truth: expected a {control, rates} map or a profile-by-arm table")
    return errors


def validate(d) -> list:
    """All diagnostics for a parsed scenario; empty when valid."""
    errors = schema_errors(d)
    if errors:
        return errors
    errors = invariant_errors(d)
    if errors:
        return errors
    try:
        scenario_from_dict(d, check=False)
    except BudError as exc:
        errors.append(f"<root>: {exc}")
    return errors


def scenario_from_dict(d: dict, check: bool = True) -> ScenarioConfig:
    """Build a ScenarioConfig; raises ConfigError with path-qualified messages."""
    if check:
        errors = validate(d)
        if errors:
            raise ConfigError(errors)
    truth = d["truth"]
    if isinstance(truth, list):
        truth = tuple(tuple(r) if isinstance(r, list) else r for r in truth)
    family = d["family"]
    default_prior = (1.0, 1.0, 1.0, 1.0) if family == "co-primary" else (1.0, 1.0)
    kwargs = dict(
        name=d["name"],
        family=family,
        T=int(d["T"]),
        truth=truth,
        designs=tuple(PolicySpec.from_dict(x) for x in d["designs"]),
        metric=MetricSpec.from_dict(d.get("metric", {})),
        prior=tuple(float(v) for v in d.get("prior", default_prior)),
        analysis=AnalysisSpec(**d.get("analysis", {})),
        scenario=d.get("scenario", ""),
    )
    for key in ("replications", "seed", "chunk", "arms_if_drawn", "prior_var"):
        if key in d:
            kwargs[key] = d[key]
    if "outcome_var" in d:
        kwargs["outcome_var"] = tuple(float(v) for v in d["outcome_var"])
    if "biomarker" in d:
        kwargs["biomarker"] = BiomarkerConfig(**d["biomarker"])
    return ScenarioConfig(**kwargs)


def read_json(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc


def load(path):
    """Read and validate a scenario file; returns ``(raw dict, ScenarioConfig)``."""
    d = read_json(path)
    return d, scenario_from_dict(d)


def with_overrides(d: dict, seed=None, reps=None, h=None) -> dict:
    """Copy of ``d`` with command-line overrides applied (``h`` replaces every BUD exponent)."""
    d = copy.deepcopy(d)
    if seed is not None:
        d["seed"] = int(seed)
    if reps is not None:
        d["replications"] = int(reps)
    if h is not None:
        for des in d["designs"]:
            if des["kind"] == "BUD":
                des["h"] = float(h)
    return d


def preset_names() -> list:
    root = resources.files("budtrial").joinpath("presets")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def preset_path(name: str) -> Path:
    name = name[:-5] if name.endswith(".json") else name
    if name not in preset_names():
        raise ConfigError([f"presets: unknown preset {name!r}; available: {', '.join(preset_names())}"])
    return Path(str(resources.files("budtrial").joinpath(f"presets/{name}.json")))


def sigmas_for_limit(cfg: ScenarioConfig):
    """Outcome standard deviations per arm: known variances (Normal) or sqrt(theta (1 - theta))."""
    if cfg.family == "normal":
        return np.sqrt(np.asarray(cfg.outcome_var, dtype=float))
    theta = cfg.truth_table()
    if cfg.family not in BINARY_FAMILIES or theta.ndim != 1:
        raise ConfigError(["family: the allocation limit needs a normal or binary scenario with explicit truth"])
    return np.sqrt(theta * (1 - theta))
