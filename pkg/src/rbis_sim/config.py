"""Scenario config files: flat ``section.key = value`` lines (a TOML subset).

Example::

    seed = 7
    num_beacons = 6000
    channel.jitter = "gaussian"
    channel.jitter_us = 3.8
    channel.slave_bias_us = 4.0
    estimator.filter = "kalman"

Keys under ``slave.`` apply to every slave; ``slave2.``, ``slave3.`` ...
override them for the additional slaves. ``clock.granularity_us`` and
``clock.drift_rw_sigma_ppm`` set node defaults. A node's ``skew_ppm`` is
either a number or ``"drawn"`` (uniform within ``clock.skew_bound_ppm``, the
default). Unknown keys are errors.
"""

from __future__ import annotations

import re
import sys
from dataclasses import asdict, replace
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .engine import ChannelConfig, ConfigError, NodeConfig, ScenarioConfig, slave_name
from .estimators import EstimatorConfig

_TOP = {
    "beacon_interval_us": int,
    "followup_interval_us": int,
    "beacon_phase_us": int,
    "followup_phase_us": int,
    "num_beacons": int,
    "probe_period_us": int,
    "horizon_beacons": int,
    "seed": int,
    "slaves": int,
}
_CLOCK = {"skew_bound_ppm": float, "granularity_us": int, "drift_rw_sigma_ppm": float}
DRAWN = "drawn"
_NODE = {"skew_ppm": "skew", "drift_rw_sigma_ppm": float, "initial_offset_us": int, "granularity_us": int}
_CHANNEL = {"base_delay_us": float, "jitter": str, "jitter_us": float, "loss_prob": float}
_ESTIMATOR = {
    "filter": str,
    "window": int,
    "q_offset": float,
    "q_skew": float,
    "r": float,
    "rate_correction": bool,
}
_NODE_SECTION = re.compile(r"^(master|slave|slave([2-9]|[1-9]\d+))$")


def _flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def _coerce(key: str, value: Any, kind, errors: list[str]) -> Any:
    if kind == "skew":
        if value == DRAWN:
            return DRAWN
        kind = float
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    name = "float or \"drawn\"" if key.endswith(".skew_ppm") else kind.__name__
    errors.append(f"{key}: expected {name}, got {value!r}")
    return None


def _schema_for(key: str):
    if "." not in key:
        return _TOP.get(key)
    section, name = key.split(".", 1)
    if section == "clock":
        return _CLOCK.get(name)
    if section == "estimator":
        return _ESTIMATOR.get(name)
    if section in ("channel", "followup"):
        if name in _CHANNEL:
            return _CHANNEL[name]
        if name.endswith("_bias_us") and _NODE_SECTION.match(name[: -len("_bias_us")]):
            return float
        return None
    if _NODE_SECTION.match(section):
        return _NODE.get(name)
    return None


def parse_flat(flat: dict[str, Any]) -> ScenarioConfig:
    """Build a config from dotted keys. Raises ConfigError listing every problem."""
    errors: list[str] = []
    values: dict[str, Any] = {}
    for key, raw in flat.items():
        kind = _schema_for(key)
        if kind is None:
            errors.append(f"{key}: unknown key")
            continue
        v = _coerce(key, raw, kind, errors)
        if v is not None:
            values[key] = v
    if errors:
        raise ConfigError(errors)

    n_slaves = values.get("slaves", 1)
    if n_slaves < 1:
        raise ConfigError(["slaves: at least one slave is required"])
    for key in values:
        m = re.match(r"^slave(\d+)\.", key)
        if m and int(m.group(1)) > n_slaves:
            errors.append(f"{key}: refers to slave{m.group(1)} but slaves = {n_slaves}")
    if errors:
        raise ConfigError(errors)

    node_default = {}
    for name in ("granularity_us", "drift_rw_sigma_ppm"):
        if f"clock.{name}" in values:
            node_default[name] = values[f"clock.{name}"]

    def node(*sections: str) -> NodeConfig:
        kw = dict(node_default)
        for section in sections:
            kw.update({k: values[f"{section}.{k}"] for k in _NODE if f"{section}.{k}" in values})
        if kw.get("skew_ppm") == DRAWN:
            kw["skew_ppm"] = None
        return NodeConfig(**kw)

    def channel(section: str, **defaults: Any) -> ChannelConfig:
        kw = dict(defaults)
        kw.update({k: values[f"{section}.{k}"] for k in _CHANNEL if f"{section}.{k}" in values})
        bias = {
            key[len(section) + 1 : -len("_bias_us")]: v
            for key, v in values.items()
            if key.startswith(section + ".") and key.endswith("_bias_us")
        }
        return ChannelConfig(bias_us=bias, **kw)

    slaves = [node("slave")] + [node("slave", slave_name(i)) for i in range(2, n_slaves + 1)]
    est = EstimatorConfig(
        **{k: values[f"estimator.{k}"] for k in _ESTIMATOR if f"estimator.{k}" in values}
    )
    top = {k: values[k] for k in _TOP if k in values and k != "slaves"}
    if "clock.skew_bound_ppm" in values:
        top["skew_bound_ppm"] = values["clock.skew_bound_ppm"]
    return ScenarioConfig(
        master=node("master"),
        slaves=tuple(slaves),
        channel=channel("channel"),
        followup_channel=channel("followup", base_delay_us=ScenarioConfig().followup_channel.base_delay_us),
        estimator=est,
        **top,
    )


def loads(text: str) -> ScenarioConfig:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"parse error: {exc}"]) from exc
    return parse_flat(_flatten(tree))


def load(path) -> ScenarioConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError([f"parse error: {exc}"]) from exc
    return loads(text)


def to_flat(config: ScenarioConfig) -> dict[str, Any]:
    """Fully resolved dotted-key form; ``parse_flat`` of it describes the same scenario."""
    flat: dict[str, Any] = {
        "beacon_interval_us": config.beacon_interval_us,
        "followup_interval_us": config.followup_interval,
        "beacon_phase_us": config.beacon_phase_us,
        "followup_phase_us": config.followup_phase,
        "num_beacons": config.num_beacons,
        "probe_period_us": config.probe_period_us,
        "horizon_beacons": config.horizon_beacons,
        "seed": config.seed,
        "slaves": len(config.slaves),
        "clock.skew_bound_ppm": config.skew_bound_ppm,
    }
    for section, nd in zip(config.node_names, (config.master, *config.slaves)):
        for k, v in asdict(nd).items():
            flat[f"{section}.{k}"] = DRAWN if v is None else v
    for section, ch in (("channel", config.channel), ("followup", config.followup_channel)):
        for k in _CHANNEL:
            flat[f"{section}.{k}"] = getattr(ch, k)
        for node_name, b in sorted(ch.bias_us.items()):
            flat[f"{section}.{node_name}_bias_us"] = float(b)
    for k in _ESTIMATOR:
        flat[f"estimator.{k}"] = getattr(config.estimator, k)
    return flat


def dumps(config: ScenarioConfig) -> str:
    lines = []
    for key, v in to_flat(config).items():
        if isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, str):
            text = f'"{v}"'
        else:
            text = repr(v)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def with_seed(config: ScenarioConfig, seed: int) -> ScenarioConfig:
    return replace(config, seed=seed)
