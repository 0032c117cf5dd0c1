"""Configuration documents for the experiment CLI.

Parsing is strict: unknown keys are rejected by name, kind-specific
parameters are required exactly when their kind needs them, and the fully
resolved document (every default materialized) is echoed back so runs are
auditable and hashable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Mapping

from .flows import DiffusionSpec, DriftSpec
from .noise import CovarianceSpec, compute_beta
from .scheme import INITIAL_PRESETS, SchemeConfig, TimeGrid, make_initial
from .spectral import OperatorSpec

__all__ = ["ConfigError", "ExperimentSetup", "parse_config", "config_digest",
           "EXPERIMENT_KINDS"]

EXPERIMENT_KINDS = ("converge", "consistency", "stability", "flow-increment",
                    "regularity", "beta")

_DRIFT_PARAMS = {"zero": (), "linear": ("rate",), "saturating": ("scale",)}
_DIFFUSION_PARAMS = {"zero": (), "additive": ("sigma",),
                     "linear_multiplicative": ("sigma",)}

_DEFAULTS: dict[str, Any] = {
    "modes": 64,
    "horizon": 1.0,
    "covariance": {"decay_rate": 1.0, "amplitude": 1.0},
    "drift": {"kind": "saturating", "scale": 1.0},
    "diffusion": {"kind": "linear_multiplicative", "sigma": 0.5},
    "initial": "decay3",
    "step_counts": [16, 32, 64, 128, 256, 512],
    "step_sizes": [2.0 ** -k for k in range(4, 10)],
    "s_values": [2.0 ** -k for k in range(6, 13)],
    "alpha": 0.5,
    "samples": 200,
    "seed": 0,
    "reference_multiple": 32,
    "consistency_substeps": 64,
    "drift_substeps": 16,
    "stochastic_substeps": 16,
    "perturbation_scale": 1e-3,
    "order_tolerance": 0.1,
    "regularity_tolerance": 0.1,
    "regularity_doubling": True,
    "partial_sum_modes": 2 ** 20,
}


class ConfigError(ValueError):
    """Configuration problem, always naming the offending key."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


@dataclass
class ExperimentSetup:
    """Parsed configuration: the problem instance plus experiment parameters
    and the resolved document they came from."""

    kind: str
    scheme: SchemeConfig
    step_counts: tuple[int, ...]
    step_sizes: tuple[float, ...]
    s_values: tuple[float, ...]
    alpha: float
    samples: int
    seed: int
    reference_multiple: int
    consistency_substeps: int
    perturbation_scale: float
    order_tolerance: float
    regularity_tolerance: float
    regularity_doubling: bool
    partial_sum_modes: int
    beta_expected: float
    resolved: dict


def _require_mapping(value, key: str) -> dict:
    if not isinstance(value, Mapping):
        raise ConfigError(key, "must be a mapping")
    return dict(value)


def _check_int(value, key: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, "must be an integer")
    if value < minimum:
        raise ConfigError(key, f"must be >= {minimum}")
    return value


def _check_number(value, key: str, *, positive=False, nonnegative=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(key, "must be a number")
    v = float(value)
    if positive and not v > 0.0:
        raise ConfigError(key, "must be positive")
    if nonnegative and not v >= 0.0:
        raise ConfigError(key, "must be nonnegative")
    return v

def _check_bool(value, key: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(key, "must be true or false")
    return value


def _check_int_list(value, key: str) -> list[int]:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(key, "must be a non-empty list of integers")
    out = [_check_int(v, f"{key}[{i}]") for i, v in enumerate(value)]
    if any(b <= a for a, b in zip(out, out[1:])):
        raise ConfigError(key, "must be strictly increasing")
    return out


def _check_decreasing_list(value, key: str) -> list[float]:
    if not isinstance(value, (list, tuple)) or len(value) < 3:
        raise ConfigError(key, "must be a list of at least 3 values")
    out = [_check_number(v, f"{key}[{i}]", positive=True) for i, v in enumerate(value)]
    if any(b >= a for a, b in zip(out, out[1:])):
        raise ConfigError(key, "must be strictly decreasing")
    return out


def _parse_kind_block(doc: dict, key: str, kinds: Mapping[str, tuple[str, ...]],
                      defaults: Mapping[str, Any]) -> dict:
    block = _require_mapping(doc.get(key, defaults), key)
    if "kind" not in block:
        raise ConfigError(f"{key}.kind", "missing required key")
    kind = block["kind"]
    if kind not in kinds:
        raise ConfigError(f"{key}.kind", f"unknown kind {kind!r}; choose one of {sorted(kinds)}")
    wanted = kinds[kind]
    for name in block:
        if name != "kind" and name not in wanted:
            raise ConfigError(f"{key}.{name}",
                              f"not allowed for kind {kind!r}" if name in
                              {p for ps in kinds.values() for p in ps}
                              else "unknown key")
    resolved = {"kind": kind}
    for name in wanted:
        if name not in block:
            raise ConfigError(f"{key}.{name}", f"missing required key for kind {kind!r}")
        resolved[name] = _check_number(block[name], f"{key}.{name}")
    return resolved


def parse_config(doc: Mapping, experiment: str,
                 seed_override: int | None = None) -> ExperimentSetup:
    """Resolve a configuration document for one experiment kind.

    Unknown keys are rejected by name; every omitted key takes its documented
    default and appears in the resolved echo.
    """
    if experiment not in EXPERIMENT_KINDS:
        raise ConfigError("experiment", f"unknown experiment kind {experiment!r}")
    if not isinstance(doc, Mapping):
        raise ConfigError("<document>", "configuration must be a mapping")
    doc = dict(doc)
    for key in doc:
        if key not in _DEFAULTS:
            raise ConfigError(str(key), "unknown key")

    modes = _check_int(doc.get("modes", _DEFAULTS["modes"]), "modes")
    horizon = _check_number(doc.get("horizon", _DEFAULTS["horizon"]), "horizon",
                            positive=True)

    cov_doc = _require_mapping(doc.get("covariance", _DEFAULTS["covariance"]),
                               "covariance")
    for name in cov_doc:
        if name not in ("decay_rate", "amplitude"):
            raise ConfigError(f"covariance.{name}", "unknown key")
    decay_rate = _check_number(
        cov_doc.get("decay_rate", _DEFAULTS["covariance"]["decay_rate"]),
        "covariance.decay_rate", nonnegative=True)
    amplitude = _check_number(
        cov_doc.get("amplitude", _DEFAULTS["covariance"]["amplitude"]),
        "covariance.amplitude", nonnegative=True)

    drift_doc = _parse_kind_block(doc, "drift", _DRIFT_PARAMS, _DEFAULTS["drift"])
    diffusion_doc = _parse_kind_block(doc, "diffusion", _DIFFUSION_PARAMS,
                                      _DEFAULTS["diffusion"])

    initial = doc.get("initial", _DEFAULTS["initial"])
    if initial not in INITIAL_PRESETS:
        raise ConfigError("initial",
                          f"unknown preset {initial!r}; choose one of {list(INITIAL_PRESETS)}")

    step_counts = _check_int_list(doc.get("step_counts", _DEFAULTS["step_counts"]),
                                  "step_counts")
    step_sizes = _check_decreasing_list(doc.get("step_sizes", _DEFAULTS["step_sizes"]),
                                        "step_sizes")
    s_values = _check_decreasing_list(doc.get("s_values", _DEFAULTS["s_values"]),
                                      "s_values")
    alpha = _check_number(doc.get("alpha", _DEFAULTS["alpha"]), "alpha",
                          nonnegative=True)
    if alpha >= 1.0:
        raise ConfigError("alpha", "must lie in [0, 1)")
    samples = _check_int(doc.get("samples", _DEFAULTS["samples"]), "samples")
    seed = doc.get("seed", _DEFAULTS["seed"])
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    if seed_override is not None:
        seed = int(seed_override)
        if seed < 0:
            raise ConfigError("seed", "must be nonnegative")
    reference_multiple = _check_int(
        doc.get("reference_multiple", _DEFAULTS["reference_multiple"]),
        "reference_multiple")
    consistency_substeps = _check_int(
        doc.get("consistency_substeps", _DEFAULTS["consistency_substeps"]),
        "consistency_substeps", minimum=2)
    drift_substeps = _check_int(doc.get("drift_substeps", _DEFAULTS["drift_substeps"]),
                                "drift_substeps")
    stochastic_substeps = _check_int(
        doc.get("stochastic_substeps", _DEFAULTS["stochastic_substeps"]),
        "stochastic_substeps")
    perturbation_scale = _check_number(
        doc.get("perturbation_scale", _DEFAULTS["perturbation_scale"]),
        "perturbation_scale", positive=True)
    order_tolerance = _check_number(
        doc.get("order_tolerance", _DEFAULTS["order_tolerance"]),
        "order_tolerance", positive=True)
    regularity_tolerance = _check_number(
        doc.get("regularity_tolerance", _DEFAULTS["regularity_tolerance"]),
        "regularity_tolerance", positive=True)
    regularity_doubling = _check_bool(
        doc.get("regularity_doubling", _DEFAULTS["regularity_doubling"]),
        "regularity_doubling")
    partial_sum_modes = _check_int(
        doc.get("partial_sum_modes", _DEFAULTS["partial_sum_modes"]),
        "partial_sum_modes")

    operator = OperatorSpec.dirichlet(modes)
    covariance = CovarianceSpec(decay_rate, amplitude, modes)
    drift = DriftSpec(**drift_doc)
    diffusion = DiffusionSpec(**diffusion_doc)
    scheme = SchemeConfig(
        operator=operator,
        covariance=covariance,
        drift=drift,
        diffusion=diffusion,
        grid=TimeGrid(horizon, max(step_counts)),
        initial=make_initial(initial, modes),
        initial_preset=initial,
        drift_substeps=drift_substeps,
        stochastic_substeps=stochastic_substeps,
    )
    beta_expected = compute_beta(covariance, operator).beta

    resolved = {
        "experiment": experiment,
        "modes": modes,
        "horizon": horizon,
        "covariance": {"decay_rate": decay_rate, "amplitude": amplitude},
        "drift": drift_doc,
        "diffusion": diffusion_doc,
        "initial": initial,
        "step_counts": step_counts,
        "step_sizes": step_sizes,
        "s_values": s_values,
        "alpha": alpha,
        "samples": samples,
        "seed": seed,
        "reference_multiple": reference_multiple,
        "consistency_substeps": consistency_substeps,
        "drift_substeps": drift_substeps,
        "stochastic_substeps": stochastic_substeps,
        "perturbation_scale": perturbation_scale,
        "order_tolerance": order_tolerance,
        "regularity_tolerance": regularity_tolerance,
        "regularity_doubling": regularity_doubling,
        "partial_sum_modes": partial_sum_modes,
        "derived": {
            "beta_expected": beta_expected,
            "stochastic_flow_exact": diffusion.has_exact_flow(covariance),
            "drift_lipschitz": drift.lipschitz_bound,
            "diffusion_lipschitz": diffusion.lipschitz_bound(covariance),
            "trace_class": covariance.is_trace_class,
        },
    }
    return ExperimentSetup(
        kind=experiment,
        scheme=scheme,
        step_counts=tuple(step_counts),
        step_sizes=tuple(step_sizes),
        s_values=tuple(s_values),
        alpha=alpha,
        samples=samples,
        seed=seed,
        reference_multiple=reference_multiple,
        consistency_substeps=consistency_substeps,
        perturbation_scale=perturbation_scale,
        order_tolerance=order_tolerance,
        regularity_tolerance=regularity_tolerance,
        regularity_doubling=regularity_doubling,
        partial_sum_modes=partial_sum_modes,
        beta_expected=beta_expected,
        resolved=resolved,
    )


def config_digest(resolved: Mapping) -> str:
    """Content hash of the resolved configuration block; recomputable from
    the echo emitted in every JSON summary."""
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
