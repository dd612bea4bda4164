"""Experiment configuration: strict JSON parsing with field-level errors.

A config file has up to five top-level keys: `method` and `seed` (required),
`threshold`, and the `data`, `federation`, and `verify` sections. Unknown keys
anywhere are rejected, naming the offending field. Seeds are set once at the
top level and flow into every section; `method = "fedavg"` forces all three
mechanism flags off.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .datagen import SyntheticSpec
from .errors import ConfigError
from .federation import FederationConfig
from .verify import VerifySpec

_METHODS = ("fedharmony", "fedavg")

_DATA_KEYS = {
    "n_labels", "n_features", "n_blocks", "in_block_strength", "cross_block_strength",
    "n_clients", "dirichlet_gamma", "samples_per_client", "test_samples",
    "reference_samples", "feature_noise",
}
_FED_KEYS = {
    "rounds", "local_epochs", "batch_size", "learning_rate", "participation_ratio",
    "sampling_mode", "lam", "epsilon", "gamma_q", "t0", "n_clusters",
    "use_alignment", "use_caa", "use_blocks", "consensus_mode",
}
_VERIFY_KEYS = {
    "instances", "min_labels", "max_labels", "cluster_counts", "steps",
    "contraction_tol", "theorem2_tol", "bench_labels", "bench_clusters",
    "bench_instances", "bench_repeats",
}
_TOP_KEYS = {"method", "seed", "threshold", "data", "federation", "verify"}


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    seed: int
    threshold: float
    data: SyntheticSpec
    federation: FederationConfig
    verify: VerifySpec


def _check_keys(section: dict, allowed: set, prefix: str) -> None:
    for key in section:
        if key not in allowed:
            where = f"{prefix}.{key}" if prefix else key
            raise ConfigError(where, "unknown key")


def _build_section(cls, section: dict, allowed: set, prefix: str, extra: dict):
    _check_keys(section, allowed, prefix)
    kwargs = dict(section)
    if "samples_per_client" in kwargs:
        kwargs["samples_per_client"] = tuple(kwargs["samples_per_client"])
    if "cluster_counts" in kwargs:
        kwargs["cluster_counts"] = tuple(kwargs["cluster_counts"])
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or cls.__name__, str(exc)) from exc


def parse_config(raw: dict, seed_override: int | None = None, threads: int = 1) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _check_keys(raw, _TOP_KEYS, "")
    for required in ("method", "seed"):
        if required not in raw:
            raise ConfigError(required, "required field is missing")
    method = raw["method"]
    if method not in _METHODS:
        raise ConfigError("method", f"must be one of {_METHODS}")
    seed = seed_override if seed_override is not None else raw["seed"]
    if not isinstance(seed, int):
        raise ConfigError("seed", "must be an integer")
    threshold = raw.get("threshold", 0.5)
    if not isinstance(threshold, (int, float)) or not 0 < threshold < 1:
        raise ConfigError("threshold", "must lie strictly between 0 and 1")

    data = _build_section(SyntheticSpec, raw.get("data", {}), _DATA_KEYS, "data", {"seed": seed})
    federation = _build_section(
        FederationConfig,
        raw.get("federation", {}),
        _FED_KEYS,
        "federation",
        {"seed": seed, "threads": threads},
    )
    if method == "fedavg":
        federation = dataclasses.replace(
            federation, use_alignment=False, use_caa=False, use_blocks=False
        )
    verify = _build_section(VerifySpec, raw.get("verify", {}), _VERIFY_KEYS, "verify", {})
    return ExperimentConfig(
        method=method,
        seed=seed,
        threshold=float(threshold),
        data=data,
        federation=federation,
        verify=verify,
    )


def load_config(path, seed_override: int | None = None, threads: int = 1) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError("<file>", f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON: {exc}") from exc
    return parse_config(raw, seed_override=seed_override, threads=threads)
