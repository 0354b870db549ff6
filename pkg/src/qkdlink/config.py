"""Run configuration: a small, versioned, human-editable JSON schema.

Top-level layout (all sections optional; omitted fields take defaults):

    {
      "format_version": 1,
      "params": { ... },      protocol parameters
      "channel": { ... },     channel and receiver model
      "detector_z": "sip-polimi-10um" or { ... },
      "detector_x": "sip-polimi-10um" or { ... },
      "run": { ... }          execution options
    }

params fields (units):
    mu1, mu2, mu3          mean photon numbers per pulse (dimensionless)
    p_mu                   [p1, p2, p3] intensity choice probabilities
    p_z_alice, p_z_bob     Z-basis choice probabilities
    rep_rate               pulse repetition rate, Hz
    block_size_nz          Z detections per block (count)
    eps_sec, eps_corr      secrecy / correctness failure bounds
    bin_separation         early/late bin separation, seconds

channel fields:
    channel_loss_db        quantum channel loss, dB
    receiver_loss_z_db     receiver loss in the key arm, dB
    receiver_loss_x_db     receiver loss in the check arm (interferometer), dB
    visibility             interference visibility in [0, 1]

detector fields (or the name of a shipped preset):
    name                   label
    efficiency             detection probability per photon
    dark_rate              dark counts per second, Hz
    mode                   "gated" | "free_running"
    gate_rate              gates per second, Hz (gated mode)
    gate_on_window         temporal acceptance window, seconds (or null)
    holdoff_time           enforced off-period after a click, seconds
    afterpulse_amplitude   expected afterpulse hazard per click (per slot)
    afterpulse_tau         afterpulse de-trapping time constant, seconds
    intrinsic_error_z      wrong-bin probability for a genuine detection

run fields:
    seed                   master seed (integer)
    target_nz              stop after this many Z detections (count)
    max_frames             frame budget (count, or null)
    sample_fraction        fraction of the sifted key disclosed for QBER
    tag_bits               confirmation tag length, bits
    f_ec                   reconciliation inefficiency factor
    adversary_fraction     intercept-resend attack fraction in [0, 1]

Unknown keys anywhere are rejected with the offending path, so typos never
pass silently.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from .core import ChannelModel, DetectorModel, ProtocolParams
from .presets import DETECTOR_PRESETS, default_channel, default_params

__all__ = [
    "CONFIG_FORMAT_VERSION",
    "ConfigError",
    "RunOptions",
    "RunConfig",
    "load_config",
    "parse_config",
    "config_to_dict",
    "save_config",
    "resolve_config_path",
]

CONFIG_FORMAT_VERSION = 1
CONFIG_DIR_ENV = "QKDLINK_CONFIG_DIR"


class ConfigError(ValueError):
    """Configuration rejected; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class RunOptions:
    seed: int = 0
    target_nz: Optional[int] = None
    max_frames: Optional[int] = None
    sample_fraction: float = 0.05
    tag_bits: int = 64
    f_ec: float = 1.16
    adversary_fraction: float = 0.0

    def __post_init__(self):
        if self.target_nz is not None and self.target_nz <= 0:
            raise ConfigError("run.target_nz", "must be a positive count")
        if self.max_frames is not None and self.max_frames <= 0:
            raise ConfigError("run.max_frames", "must be a positive count")
        if not (0.0 <= self.sample_fraction < 1.0):
            raise ConfigError("run.sample_fraction", "must be in [0, 1)")
        if self.tag_bits < 1:
            raise ConfigError("run.tag_bits", "must be >= 1")
        if self.f_ec < 1.0:
            raise ConfigError("run.f_ec", "must be >= 1")
        if not (0.0 <= self.adversary_fraction <= 1.0):
            raise ConfigError("run.adversary_fraction", "must be in [0, 1]")


@dataclass
class RunConfig:
    params: ProtocolParams
    channel: ChannelModel
    detector_z: DetectorModel
    detector_x: DetectorModel
    run: RunOptions


def _check_keys(section: dict, allowed: set[str], where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{where}.{key}", "unknown key")


def _build_dataclass(cls, base, section: dict, where: str):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, allowed, where)
    try:
        if base is not None:
            return dataclasses.replace(base, **_coerce(cls, section, where))
        return cls(**_coerce(cls, section, where))
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, str(exc)) from None


def _coerce(cls, section: dict, where: str) -> dict:
    out = {}
    for key, value in section.items():
        if key == "p_mu" and isinstance(value, list):
            value = tuple(value)
        out[key] = value
    return out


def _detector_from(value: Any, where: str) -> DetectorModel:
    if isinstance(value, str):
        if value not in DETECTOR_PRESETS:
            raise ConfigError(where, f"unknown preset {value!r}; "
                                     f"available: {sorted(DETECTOR_PRESETS)}")
        return DETECTOR_PRESETS[value]
    if isinstance(value, dict):
        base = None
        section = dict(value)
        preset = section.pop("preset", None)
        if preset is not None:
            if preset not in DETECTOR_PRESETS:
                raise ConfigError(f"{where}.preset", f"unknown preset {preset!r}")
            base = DETECTOR_PRESETS[preset]
        return _build_dataclass(DetectorModel, base, section, where)
    raise ConfigError(where, "must be a preset name or a field mapping")


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "top level must be a mapping")
    _check_keys(data, {"format_version", "params", "channel",
                       "detector_z", "detector_x", "run"}, "<root>")
    version = data.get("format_version", CONFIG_FORMAT_VERSION)
    if version != CONFIG_FORMAT_VERSION:
        raise ConfigError("format_version",
                          f"unsupported version {version}, expected {CONFIG_FORMAT_VERSION}")
    params = _build_dataclass(ProtocolParams, default_params(),
                              data.get("params", {}), "params")
    channel = _build_dataclass(ChannelModel, default_channel(3.0),
                               data.get("channel", {}), "channel")
    det_z = _detector_from(data.get("detector_z", "sip-polimi-10um"), "detector_z")
    det_x = _detector_from(data.get("detector_x", "sip-polimi-10um"), "detector_x")
    run_section = data.get("run", {})
    allowed = {f.name for f in dataclasses.fields(RunOptions)}
    if not isinstance(run_section, dict):
        raise ConfigError("run", "must be a mapping")
    _check_keys(run_section, allowed, "run")
    try:
        run = RunOptions(**run_section)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError("run", str(exc)) from None
    return RunConfig(params=params, channel=channel,
                     detector_z=det_z, detector_x=det_x, run=run)


def resolve_config_path(path: str) -> Path:
    """Resolve a config path, falling back to $QKDLINK_CONFIG_DIR."""
    p = Path(path)
    if p.exists():
        return p
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidate = Path(env_dir) / path
        if candidate.exists():
            return candidate
    return p


def load_config(path: str) -> RunConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
    return parse_config(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "format_version": CONFIG_FORMAT_VERSION,
        "params": dataclasses.asdict(cfg.params),
        "channel": dataclasses.asdict(cfg.channel),
        "detector_z": dataclasses.asdict(cfg.detector_z),
        "detector_x": dataclasses.asdict(cfg.detector_x),
        "run": dataclasses.asdict(cfg.run),
    }


def save_config(cfg: RunConfig, path: str):
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
