"""Pipeline configuration: INI-style file sections plus CLI overrides.

The file mirrors the module configs ([retrieval], [match], [pnp]); every
command-line flag overrides its file counterpart, so sweeps can combine
a base file with per-run flags.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, replace

from ..match import MatchConfig
from ..pnp import RansacConfig
from ..retrieval import RetrievalConfig

__all__ = ["ConfigError", "PipelineConfig", "load_pipeline_config"]


class ConfigError(ValueError):
    """Bad configuration file or flag value (CLI exit code 2)."""


@dataclass(frozen=True)
class PipelineConfig:
    retrieval: RetrievalConfig = RetrievalConfig()
    match: MatchConfig = MatchConfig()
    pnp: RansacConfig = RansacConfig()
    use_prior: bool = True  # sensor-guided retrieval filter on/off


_BOOL = {"on": True, "off": False, "true": True, "false": False, "1": True, "0": False}


def _parse_bool(value: str, what: str) -> bool:
    key = str(value).strip().lower()
    if key not in _BOOL:
        raise ConfigError(f"{what} must be on/off, got {value!r}")
    return _BOOL[key]


def load_pipeline_config(path=None, overrides=None) -> PipelineConfig:
    """Build the config from an optional INI file and override mapping.

    ``overrides`` uses dotted keys (e.g. ``pnp.tau-eps``) as produced by
    the CLI flags; ``None`` values are ignored.
    """
    values: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"config file {path} not found or unreadable")
        for section in parser.sections():
            for key, val in parser[section].items():
                values[f"{section}.{key}".lower()] = val
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key.replace("-", "_").lower()] = str(val)

    def pop(name, default, cast):
        raw = values.pop(name.replace("-", "_").lower(), None)
        if raw is None:
            return default
        try:
            if cast is bool:
                return _parse_bool(raw, name)
            return cast(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad value for {name}: {raw!r} ({e})") from None

    try:
        retrieval = RetrievalConfig(
            tau_t=pop("retrieval.tau_t", 20.0, float),
            tau_o=pop("retrieval.tau_o", 60.0, float),
            k=pop("retrieval.k", 10, int),
        )
        match = MatchConfig(
            temperature=pop("match.temperature", 0.1, float),
            theta=pop("match.theta", 0.05, float),
            window=pop("match.window", 5, int),
        )
        pnp = RansacConfig(
            inlier_px=pop("pnp.inlier_px", 5.0, float),
            max_iters=pop("pnp.max_iters", 10000, int),
            confidence=pop("pnp.confidence", 0.9999, float),
            tau_eps=pop("pnp.tau_eps", 2.0, float),
            gravity_gate=pop("pnp.gravity_gate", True, bool),
            seed=pop("pnp.seed", 0, int),
        )
        use_prior = pop("retrieval.prior", True, bool)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None

    known_leftover = {k for k in values if k.split(".")[0] in ("retrieval", "match", "pnp")}
    if known_leftover:
        raise ConfigError(f"unknown config keys: {sorted(known_leftover)}")
    return PipelineConfig(retrieval=retrieval, match=match, pnp=pnp, use_prior=use_prior)
