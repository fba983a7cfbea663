import os
from dataclasses import dataclass, field, fields, replace

import tomli

from ..api.backends import DEFAULT_TOKEN_ENV, SERVICES, BackendConfig


# --- Settings ---


@dataclass(frozen=True)
class EncodeSettings:
    target_bpp: float = 0.025
    detection_threshold: float = 0.35
    mask_factor: int = 8


@dataclass(frozen=True)
class DecodeSettings:
    steps: int = 50
    guidance_threshold: int | None = None
    eta: float = 1.0
    token_index: int | None = 0
    seed: int = 0


@dataclass(frozen=True)
class SedicConfig:
    """
    Settings resolved from defaults, an optional TOML file and command-line overrides.

    Example file:

        [backend]
        mode = "http"
        timeout = 30
        retries = 2

        [backend.captioner]
        endpoint = "https://api.openai.com/v1"
        model = "gpt-4o"

        [encode]
        target_bpp = 0.025

        [decode]
        steps = 50
        eta = 1.0
    """
    mode: str = "mock"
    services: dict[str, BackendConfig] = field(default_factory=dict)
    encode: EncodeSettings = field(default_factory=EncodeSettings)
    decode: DecodeSettings = field(default_factory=DecodeSettings)


def _pick(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {', '.join(sorted(unknown))}")
    return cls(**values)


def load_config(path: str | None = None) -> SedicConfig:
    """
    Reads a TOML configuration file.

    Parameters:
        path (str, optional): TOML file; None returns the defaults.

    Returns:
        SedicConfig: Parsed settings.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: On unknown keys or invalid values.
    """
    if path is None:
        return SedicConfig()
    if not os.path.isfile(path):
        raise FileNotFoundError(f"cannot read config file {path}")
    with open(path, "rb") as handle:
        try:
            data = tomli.load(handle)
        except tomli.TOMLDecodeError as e:
            raise ValueError(f"invalid TOML in {path}: {e}") from e

    backend = dict(data.get("backend", {}))
    mode = backend.pop("mode", "mock")
    shared = {key: backend.pop(key) for key in ("token_env", "timeout", "retries") if key in backend}
    shared.setdefault("token_env", DEFAULT_TOKEN_ENV)
    services = {}
    for service in SERVICES:
        values = {**shared, **backend.pop(service, {})}
        services[service] = _pick(BackendConfig, values, f"backend.{service}")
    if backend:
        raise ValueError(f"unknown keys in [backend]: {', '.join(sorted(backend))}")

    return SedicConfig(
        mode=mode,
        services=services,
        encode=_pick(EncodeSettings, data.get("encode", {}), "encode"),
        decode=_pick(DecodeSettings, data.get("decode", {}), "decode"),
    )


def apply_overrides(config: SedicConfig, **overrides) -> SedicConfig:
    """
    Returns a copy with the non-None overrides applied; command-line flags win over the file.

    Recognized keys: mode, target_bpp, detection_threshold, mask_factor, steps,
    guidance_threshold, eta, token_index, seed.
    """
    overrides = {key: value for key, value in overrides.items() if value is not None}
    encode_keys = {f.name for f in fields(EncodeSettings)}
    decode_keys = {f.name for f in fields(DecodeSettings)}
    unknown = set(overrides) - encode_keys - decode_keys - {"mode"}
    if unknown:
        raise ValueError(f"unknown overrides: {', '.join(sorted(unknown))}")
    return replace(
        config,
        mode=overrides.get("mode", config.mode),
        encode=replace(config.encode, **{k: v for k, v in overrides.items() if k in encode_keys}),
        decode=replace(config.decode, **{k: v for k, v in overrides.items() if k in decode_keys}),
    )
